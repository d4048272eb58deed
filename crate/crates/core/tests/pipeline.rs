use std::fs::File;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use lmse_core::data::{
    load_split, make_task, write_idx_images, write_idx_labels, DatasetId, Split, TrainCap, PIXELS,
};
use lmse_core::harness::{train, HyperGrid, RunResult};
use lmse_core::losses::LossSpec;
use lmse_core::model::CaeConfig;
use lmse_core::optim::OptimizerKind;

/// Class 0 is a centred blob, every other class a diagonal stroke.
fn images(count: usize) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = Vec::with_capacity(count * PIXELS);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = (i % 10) as u8;
        labels.push(label);
        for r in 0..28i32 {
            for c in 0..28i32 {
                let on = if label == 0 {
                    (r - 14).pow(2) + (c - 14).pow(2) < 40 + (i as i32 % 5)
                } else {
                    (r - c - label as i32).abs() < 2
                };
                pixels.push(if on { 230 } else { 10 });
            }
        }
    }
    (pixels, labels)
}

fn write_split(dir: &Path, stems: (&str, &str), count: usize, gz: bool) {
    let (pixels, labels) = images(count);
    if gz {
        let f = GzEncoder::new(
            File::create(dir.join(format!("{}.gz", stems.0))).unwrap(),
            Compression::fast(),
        );
        write_idx_images(f, count, &pixels).unwrap();
        let f = GzEncoder::new(
            File::create(dir.join(format!("{}.gz", stems.1))).unwrap(),
            Compression::fast(),
        );
        write_idx_labels(f, &labels).unwrap();
    } else {
        write_idx_images(File::create(dir.join(stems.0)).unwrap(), count, &pixels).unwrap();
        write_idx_labels(File::create(dir.join(stems.1)).unwrap(), &labels).unwrap();
    }
}

#[test]
fn synthetic_files_train_and_score() {
    let dir = tempfile::tempdir().unwrap();
    write_split(
        dir.path(),
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        300,
        true,
    );
    write_split(
        dir.path(),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        100,
        false,
    );

    let train_set = load_split(dir.path(), DatasetId::Mnist, Split::Train).unwrap();
    let test_set = load_split(dir.path(), DatasetId::Mnist, Split::Test).unwrap();
    assert_eq!((train_set.len(), test_set.len()), (300, 100));

    let task = make_task(
        &train_set,
        &test_set,
        0,
        Some(TrainCap {
            max_images: 20,
            seed: 0,
        }),
    )
    .unwrap();
    assert_eq!(task.train_normal.len(), 20);
    assert_eq!(
        task.test_binary_labels()
            .iter()
            .filter(|&&l| l == 0)
            .count(),
        10
    );

    let grid = HyperGrid {
        latent_dims: vec![4],
        learning_rates: vec![3e-3],
        seeds: vec![1],
        epochs: 4,
        batch_size: 8,
        optimizer: OptimizerKind::Adam,
        train_images: Some(20),
        subset_seed: 0,
    };
    let point = &grid.points()[0];
    for loss in [LossSpec::mse(), LossSpec::lmse()] {
        let r = train(&task, &loss, &CaeConfig::new(4), point).unwrap();
        assert_eq!(r.epoch_losses.len(), 4);
        assert!(
            r.epoch_losses[3] < r.epoch_losses[0],
            "{:?}",
            r.epoch_losses
        );
        let auc = r.auroc.unwrap();
        assert!((0.0..=1.0).contains(&auc));

        let path = dir.path().join(format!("{}.json", loss.kind.name()));
        r.write_json(&path).unwrap();
        let back = RunResult::read_json(&path).unwrap();
        assert_eq!(back, r);
    }
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_split(dir.path(), DatasetId::Fmnist, Split::Test).unwrap_err();
    assert!(err.to_string().contains("t10k-images-idx3-ubyte"), "{err}");
}
