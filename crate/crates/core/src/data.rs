//! IDX (MNIST-format) loading and one-class anomaly task construction.
//!
//! IDX files are a big-endian `u32` magic, one big-endian `u32` per
//! dimension, then raw unsigned bytes. Images use magic `0x00000803` with
//! dims `[n, rows, cols]`; labels use `0x00000801` with dims `[n]`. Gzip
//! input is detected by its header and inflated transparently.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::run_rng;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
pub const NUM_CLASSES: u8 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Mnist,
    #[serde(alias = "fashion-mnist")]
    Fmnist,
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Fmnist => "fmnist",
        })
    }
}

impl std::str::FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetId::Mnist),
            "fmnist" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetId::Fmnist),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

impl DatasetId {
    /// Human-readable class names in label order.
    pub fn class_names(&self) -> [&'static str; 10] {
        match self {
            DatasetId::Mnist => ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"],
            DatasetId::Fmnist => [
                "T-shirt/top",
                "Trouser",
                "Pullover",
                "Dress",
                "Coat",
                "Sandal",
                "Shirt",
                "Sneaker",
                "Bag",
                "Ankle boot",
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file_stems(&self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }

    /// Uncompressed byte lengths of the official (images, labels) files.
    pub fn expected_file_sizes(&self) -> (usize, usize) {
        let n = match self {
            Split::Train => 60_000,
            Split::Test => 10_000,
        };
        (16 + n * PIXELS, 8 + n)
    }
}

/// Raw parse of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let body = &bytes[header.min(bytes.len())..];
    match body.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(format_err(
            path,
            format!(
                "truncated payload: expected {len} bytes, found {}",
                body.len()
            ),
        )),
        std::cmp::Ordering::Greater => Err(format_err(
            path,
            format!("{} trailing bytes after payload", body.len() - len),
        )),
        std::cmp::Ordering::Equal => Ok(body),
    }
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<RawImages> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(path, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)?;
    let cols = be_u32(bytes, 12, path)?;
    if rows as usize != SIDE || cols as usize != SIDE {
        return Err(Error::UnsupportedShape {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    let pixels = payload(bytes, 16, count * PIXELS, path)?.to_vec();
    Ok(RawImages {
        count,
        rows: SIDE,
        cols: SIDE,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(format_err(path, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let labels = payload(bytes, 8, count, path)?;
    if let Some(i) = labels.iter().position(|&l| l >= NUM_CLASSES) {
        return Err(format_err(
            path,
            format!("label {} at index {i} is out of range", labels[i]),
        ));
    }
    Ok(labels.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    let path = path.as_ref();
    parse_idx_images(&read_all(path)?, path)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_all(path)?, path)
}

pub fn write_idx_images<W: Write>(mut w: W, count: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), count * PIXELS);
    for v in [IMAGE_MAGIC, count as u32, SIDE as u32, SIDE as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(pixels)
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> std::io::Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)
}

/// Single-channel 28x28 images with labels. Pixels are stored as the raw
/// bytes and normalised to `byte / 255` whenever a batch is materialised.
#[derive(Clone, Debug)]
pub struct ImageSet {
    pub dataset: DatasetId,
    pub split: Split,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(dataset: DatasetId, split: Split, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(Error::Dimension(format!(
                "{} pixel bytes for {} labels",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= NUM_CLASSES) {
            return Err(Error::Config(format!(
                "label {} at index {i} is out of range",
                labels[i]
            )));
        }
        Ok(ImageSet {
            dataset,
            split,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Normalised pixels of image `i`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        self.image_bytes(i)
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect()
    }

    /// `[indices.len(), 1, 28, 28]` tensor of normalised pixels.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend(self.image_bytes(i).iter().map(|&b| f64::from(b) / 255.0));
        }
        Tensor::new(vec![indices.len(), 1, SIDE, SIDE], data).expect("batch shape")
    }

    pub fn class_counts(&self) -> [usize; 10] {
        let mut counts = [0; 10];
        self.labels.iter().for_each(|&l| counts[l as usize] += 1);
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image_bytes(i));
            labels.push(self.labels[i]);
        }
        ImageSet {
            dataset: self.dataset,
            split: self.split,
            pixels,
            labels,
        }
    }
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::io(
        plain,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "dataset file not found (also tried .gz)",
        ),
    ))
}

/// Load one split from `dir`, which holds the four standard IDX files
/// (optionally gzip-compressed with a `.gz` suffix).
pub fn load_split(dir: impl AsRef<Path>, dataset: DatasetId, split: Split) -> Result<ImageSet> {
    let dir = dir.as_ref();
    let (img_stem, lbl_stem) = split.file_stems();
    let images = load_idx_images(locate(dir, img_stem)?)?;
    let labels = load_idx_labels(locate(dir, lbl_stem)?)?;
    if images.count != labels.len() {
        return Err(format_err(
            dir,
            format!("{} images but {} labels", images.count, labels.len()),
        ));
    }
    ImageSet::new(dataset, split, images.pixels, labels)
}

/// Cap on the number of normal-class training images, drawn as a prefix of a
/// seeded shuffle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainCap {
    pub max_images: usize,
    pub seed: u64,
}

/// One-class task: train on one class, score the whole test split.
#[derive(Clone, Debug)]
pub struct AnomalyTask {
    pub normal_class: u8,
    pub train_normal: ImageSet,
    pub test_all: ImageSet,
}

impl AnomalyTask {
    pub fn id(&self) -> String {
        format!("{}-class{}", self.train_normal.dataset, self.normal_class)
    }

    /// `true` for test images outside the normal class.
    pub fn test_is_anomalous(&self) -> Vec<bool> {
        self.test_all
            .labels()
            .iter()
            .map(|&l| l != self.normal_class)
            .collect()
    }

    /// Test labels relabelled to 0 (normal) / 1 (anomalous).
    pub fn test_binary_labels(&self) -> Vec<u8> {
        self.test_is_anomalous().into_iter().map(u8::from).collect()
    }
}

pub fn make_task(
    train: &ImageSet,
    test: &ImageSet,
    normal_class: u8,
    cap: Option<TrainCap>,
) -> Result<AnomalyTask> {
    if normal_class >= NUM_CLASSES {
        return Err(Error::Config(format!(
            "normal class must be 0..=9, got {normal_class}"
        )));
    }
    let mut idx: Vec<usize> = (0..train.len())
        .filter(|&i| train.labels[i] == normal_class)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyTask(normal_class));
    }
    if let Some(cap) = cap {
        if cap.max_images < idx.len() {
            idx.shuffle(&mut run_rng(cap.seed));
            idx.truncate(cap.max_images);
            idx.sort_unstable();
        }
    }
    Ok(AnomalyTask {
        normal_class,
        train_normal: train.subset(&idx),
        test_all: test.clone(),
    })
}

/// Download the four IDX files for `dataset` from `base_url` into `dir`,
/// checking each inflated payload against the official byte length.
#[cfg(feature = "fetch")]
pub fn fetch(dir: impl AsRef<Path>, base_url: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in [Split::Train, Split::Test] {
        let (img, lbl) = split.file_stems();
        let (img_len, lbl_len) = split.expected_file_sizes();
        for (stem, len) in [(img, img_len), (lbl, lbl_len)] {
            let url = format!("{}/{stem}.gz", base_url.trim_end_matches('/'));
            let target = dir.join(format!("{stem}.gz"));
            let body = ureq::get(&url)
                .call()
                .and_then(|mut r| r.body_mut().with_config().limit(64 << 20).read_to_vec())
                .map_err(|e| Error::io(&target, std::io::Error::other(e.to_string())))?;
            let mut inflated = Vec::new();
            GzDecoder::new(body.as_slice())
                .read_to_end(&mut inflated)
                .map_err(|e| Error::io(&target, e))?;
            if inflated.len() != len {
                return Err(format_err(
                    &target,
                    format!("expected {len} bytes, downloaded {}", inflated.len()),
                ));
            }
            std::fs::write(&target, &body).map_err(|e| Error::io(&target, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(labels: &[u8]) -> Vec<u8> {
        (0..labels.len() * PIXELS)
            .map(|i| (i * 31 % 256) as u8)
            .collect()
    }

    #[test]
    fn image_roundtrip() {
        let pixels = synthetic(&[3, 7]);
        let mut buf = Vec::new();
        write_idx_images(&mut buf, 2, &pixels).unwrap();
        assert_eq!(buf.len(), 16 + 2 * PIXELS);
        let raw = parse_idx_images(&buf, Path::new("mem")).unwrap();
        assert_eq!(raw.count, 2);
        assert_eq!(raw.pixels, pixels);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut buf = Vec::new();
        write_idx_labels(&mut buf, &[1, 2]).unwrap();
        assert!(matches!(
            parse_idx_images(&buf, Path::new("x")),
            Err(Error::Format { .. })
        ));
        let mut img = Vec::new();
        write_idx_images(&mut img, 0, &[]).unwrap();
        assert!(matches!(
            parse_idx_labels(&img, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut buf = Vec::new();
        write_idx_images(&mut buf, 1, &[0; PIXELS]).unwrap();
        buf.pop();
        assert!(matches!(
            parse_idx_images(&buf, Path::new("x")),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_idx_images(&buf[..10], Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn non_28_dims_unsupported() {
        let mut buf = Vec::new();
        for v in [IMAGE_MAGIC, 1, 32, 32] {
            buf.extend_from_slice(&v.to_be_bytes());
        }
        buf.extend(std::iter::repeat_n(0u8, 32 * 32));
        assert!(matches!(
            parse_idx_images(&buf, Path::new("x")),
            Err(Error::UnsupportedShape {
                rows: 32,
                cols: 32,
                ..
            })
        ));
    }

    #[test]
    fn labels_edge_cases() {
        let mut empty = Vec::new();
        write_idx_labels(&mut empty, &[]).unwrap();
        assert_eq!(
            parse_idx_labels(&empty, Path::new("x")).unwrap(),
            Vec::<u8>::new()
        );

        let mut bad = Vec::new();
        write_idx_labels(&mut bad, &[1, 12]).unwrap();
        assert!(matches!(
            parse_idx_labels(&bad, Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    fn set(labels: &[u8], split: Split) -> ImageSet {
        ImageSet::new(DatasetId::Mnist, split, synthetic(labels), labels.to_vec()).unwrap()
    }

    #[test]
    fn task_filters_and_relabels() {
        let train = set(&[0, 1, 0, 2, 0], Split::Train);
        let test = set(&[0, 1, 2, 0], Split::Test);
        let task = make_task(&train, &test, 0, None).unwrap();
        assert_eq!(task.train_normal.len(), 3);
        assert!(task.train_normal.labels().iter().all(|&l| l == 0));
        assert_eq!(task.train_normal.image_bytes(1), train.image_bytes(2));
        assert_eq!(task.test_all.len(), 4);
        assert_eq!(task.test_binary_labels(), vec![0, 1, 1, 0]);
    }

    #[test]
    fn task_errors() {
        let train = set(&[0, 1], Split::Train);
        let test = set(&[0], Split::Test);
        assert!(matches!(
            make_task(&train, &test, 10, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_task(&train, &test, 5, None),
            Err(Error::EmptyTask(5))
        ));
    }

    #[test]
    fn capped_task_is_seeded_prefix() {
        let labels: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
        let train = set(&labels, Split::Train);
        let test = set(&[0], Split::Test);
        let cap = Some(TrainCap {
            max_images: 7,
            seed: 3,
        });
        let a = make_task(&train, &test, 1, cap).unwrap();
        let b = make_task(&train, &test, 1, cap).unwrap();
        assert_eq!(a.train_normal.len(), 7);
        assert_eq!(a.train_normal.image(4), b.train_normal.image(4));
        let big = make_task(
            &train,
            &test,
            1,
            Some(TrainCap {
                max_images: 1000,
                seed: 3,
            }),
        )
        .unwrap();
        assert_eq!(big.train_normal.len(), 25);
    }

    #[test]
    fn batch_normalises_bytes() {
        let train = set(&[4], Split::Train);
        let b = train.batch(&[0]);
        assert_eq!(b.shape(), &[1, 1, 28, 28]);
        let d = b.data();
        assert_eq!(d[1], 31.0 / 255.0);
        assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.gz");
        let mut enc = GzEncoder::new(
            std::fs::File::create(&path).unwrap(),
            flate2::Compression::fast(),
        );
        write_idx_labels(&mut enc, &[9, 0, 4]).unwrap();
        enc.finish().unwrap();
        assert_eq!(load_idx_labels(&path).unwrap(), vec![9, 0, 4]);
    }
}
