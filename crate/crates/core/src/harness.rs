//! Training loop, paired grid search and table / convergence emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_task, AnomalyTask, DatasetId, ImageSet, TrainCap, NUM_CLASSES, PIXELS};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::metrics::{anomaly_scores, auroc, convergence_stats, mean_std, ScoreKind, ScoreSet};
use crate::model::{CaeConfig, CaeModel};
use crate::optim::{zero_grad, OptimizerKind, OptimizerState};
use crate::rng::{derive_seed, run_rng};
use crate::tensor::no_grad;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const EVAL_BATCH: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::Config(format!("unknown scale {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub latent_dims: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Cap on normal-class training images; `None` uses the whole class.
    #[serde(default)]
    pub train_images: Option<usize>,
    /// Seed of the shuffle that picks the capped training subset.
    #[serde(default)]
    pub subset_seed: u64,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

impl HyperGrid {
    pub fn full() -> Self {
        HyperGrid {
            latent_dims: vec![2, 4, 8, 16, 32],
            learning_rates: vec![1e-4, 5e-4, 1e-3, 5e-3],
            seeds: vec![42, 43, 44],
            epochs: 30,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            train_images: None,
            subset_seed: 0,
        }
    }

    pub fn desk() -> Self {
        HyperGrid {
            latent_dims: vec![4, 16],
            learning_rates: vec![1e-4, 1e-3],
            seeds: vec![42, 43],
            epochs: 5,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            train_images: Some(2000),
            subset_seed: 0,
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dims.is_empty() || self.learning_rates.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("grid lists must be non-empty".into()));
        }
        if self.latent_dims.contains(&0) {
            return Err(Error::Config("latent dimensions must be positive".into()));
        }
        if self
            .learning_rates
            .iter()
            .any(|&lr| !(lr > 0.0 && lr.is_finite()))
        {
            return Err(Error::Config(
                "learning rates must be positive and finite".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.train_images == Some(0) {
            return Err(Error::Config("train_images cap must be positive".into()));
        }
        Ok(())
    }

    pub fn train_cap(&self) -> Option<TrainCap> {
        self.train_images.map(|max_images| TrainCap {
            max_images,
            seed: self.subset_seed,
        })
    }

    /// Cartesian product in (latent, lr, seed) order.
    pub fn points(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &latent_dim in &self.latent_dims {
            for &learning_rate in &self.learning_rates {
                for &seed in &self.seeds {
                    out.push(HyperParams {
                        latent_dim,
                        learning_rate,
                        seed,
                        epochs: self.epochs,
                        batch_size: self.batch_size,
                        optimizer: self.optimizer,
                    });
                }
            }
        }
        out
    }
}

/// A single grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub loss: LossSpec,
    pub model: CaeConfig,
    pub hyper: HyperParams,
    pub seed: u64,
    pub score: ScoreKind,
    pub train_images: usize,
    /// Sample-weighted mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// `None` when the run failed.
    pub auroc: Option<f64>,
    #[serde(default)]
    pub failure: Option<String>,
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.auroc.is_some()
    }

    /// JSON value with timing fields removed, for reproducibility checks.
    pub fn without_timing(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("RunResult serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_secs");
        }
        v
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Train with the default per-sample MSE score.
pub fn train(
    task: &AnomalyTask,
    loss: &LossSpec,
    config: &CaeConfig,
    hyper: &HyperParams,
) -> Result<RunResult> {
    train_with_score(task, loss, config, hyper, ScoreKind::Mse)
}

/// `config.latent_dim` is replaced by the grid point's latent dimension.
pub fn train_with_score(
    task: &AnomalyTask,
    loss: &LossSpec,
    config: &CaeConfig,
    hyper: &HyperParams,
    score: ScoreKind,
) -> Result<RunResult> {
    let start = Instant::now();
    loss.validate()?;
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if task.train_normal.is_empty() {
        return Err(Error::EmptyTask(task.normal_class));
    }
    let config = CaeConfig {
        latent_dim: hyper.latent_dim,
        ..config.clone()
    };
    let model = CaeModel::build(&config, derive_seed(hyper.seed, INIT_STREAM))?;
    let params = model.params().to_vec();
    let mut opt = OptimizerState::new(hyper.optimizer, hyper.learning_rate, &params)?;
    let mut order_rng = run_rng(derive_seed(hyper.seed, SHUFFLE_STREAM));

    let n = task.train_normal.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut step = 0usize;
    for _ in 0..hyper.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let x = task.train_normal.batch(chunk);
            zero_grad(&params);
            let out = model.forward(&x)?;
            let l = loss.apply(&x, &out)?;
            let value = l.item()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, value });
            }
            l.backward()?;
            opt.step(&params)?;
            total += value * chunk.len() as f64;
            step += 1;
        }
        epoch_losses.push(total / n as f64);
    }

    let scores = score_split(&model, &task.test_all, score)?;
    let set = ScoreSet::from_labels(&scores, &task.test_is_anomalous())?;
    let auc = auroc(&set)?;

    Ok(RunResult {
        task: task.id(),
        loss: *loss,
        model: config,
        hyper: hyper.clone(),
        seed: hyper.seed,
        score,
        train_images: n,
        epoch_losses,
        auroc: Some(auc),
        failure: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Per-sample anomaly scores of every image in `set`, without recording a graph.
pub fn score_split(model: &CaeModel, set: &ImageSet, kind: ScoreKind) -> Result<Vec<f64>> {
    no_grad(|| {
        let all: Vec<usize> = (0..set.len()).collect();
        let mut scores = Vec::with_capacity(set.len());
        for chunk in all.chunks(EVAL_BATCH) {
            let x = set.batch(chunk);
            let out = model.forward(&x)?;
            scores.extend(anomaly_scores(&x.data(), &out.data(), PIXELS, kind)?);
        }
        Ok(scores)
    })
}

fn failed_run(
    task: &AnomalyTask,
    loss: &LossSpec,
    config: &CaeConfig,
    hyper: &HyperParams,
    score: ScoreKind,
    err: &Error,
) -> RunResult {
    RunResult {
        task: task.id(),
        loss: *loss,
        model: CaeConfig {
            latent_dim: hyper.latent_dim,
            ..config.clone()
        },
        hyper: hyper.clone(),
        seed: hyper.seed,
        score,
        train_images: task.train_normal.len(),
        epoch_losses: Vec::new(),
        auroc: None,
        failure: Some(err.to_string()),
        wall_time_secs: 0.0,
    }
}

/// One result per grid point, in grid order. Failed runs are kept with
/// `failure` set rather than aborting the sweep.
pub fn grid_search(
    task: &AnomalyTask,
    loss: &LossSpec,
    config: &CaeConfig,
    grid: &HyperGrid,
    score: ScoreKind,
) -> Result<Vec<RunResult>> {
    grid.validate()?;
    loss.validate()?;
    let points = grid.points();
    Ok(points
        .par_iter()
        .map(|h| {
            train_with_score(task, loss, config, h, score)
                .unwrap_or_else(|e| failed_run(task, loss, config, h, score, &e))
        })
        .collect())
}

/// Both arms over identical grid points, seeds and data.
pub fn paired_grid_search(
    task: &AnomalyTask,
    losses: &[LossSpec],
    config: &CaeConfig,
    grid: &HyperGrid,
    score: ScoreKind,
) -> Result<Vec<Vec<RunResult>>> {
    losses
        .iter()
        .map(|l| grid_search(task, l, config, grid, score))
        .collect()
}

/// Experiment description loadable from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: HyperGrid,
    pub model: CaeConfig,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossSpec>,
    #[serde(default)]
    pub score: ScoreKind,
}

fn default_losses() -> Vec<LossSpec> {
    vec![LossSpec::mse(), LossSpec::lmse()]
}

impl ExperimentConfig {
    pub fn for_scale(scale: Scale) -> Self {
        ExperimentConfig {
            grid: HyperGrid::for_scale(scale),
            model: CaeConfig::new(16),
            losses: default_losses(),
            score: ScoreKind::Mse,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.model.validate()?;
        if self.losses.is_empty() {
            return Err(Error::Config("at least one loss is required".into()));
        }
        self.losses.iter().try_for_each(LossSpec::validate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Class label, or `total`.
    pub class: String,
    pub loss: String,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub n_runs: usize,
    pub n_failed: usize,
}

#[derive(Clone, Debug)]
pub struct TableReport {
    pub rows: Vec<TableRow>,
    pub runs: Vec<RunResult>,
}

impl TableReport {
    pub fn row(&self, class: &str, loss: &str) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.loss == loss)
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.succeeded()).count()
    }
}

fn summarize(class: String, loss: String, runs: &[&RunResult]) -> TableRow {
    let aucs: Vec<f64> = runs.iter().filter_map(|r| r.auroc).collect();
    let stats = mean_std(&aucs);
    TableRow {
        class,
        loss,
        auroc_mean: stats.map(|s| s.0),
        auroc_std: stats.map(|s| s.1),
        n_runs: aucs.len(),
        n_failed: runs.len() - aucs.len(),
    }
}

/// Per-class rows followed by a `total` row per loss, pooled over every
/// successful run of that loss.
pub fn summarize_table(runs: &[RunResult], classes: &[u8]) -> Vec<TableRow> {
    let mut losses: Vec<String> = Vec::new();
    for r in runs {
        let name = r.loss.kind.name();
        if !losses.contains(&name) {
            losses.push(name);
        }
    }
    let mut rows = Vec::new();
    for &c in classes {
        for l in &losses {
            let sel: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.loss.kind.name() == *l && r.task.ends_with(&format!("class{c}")))
                .collect();
            rows.push(summarize(c.to_string(), l.clone(), &sel));
        }
    }
    for l in &losses {
        let sel: Vec<&RunResult> = runs.iter().filter(|r| r.loss.kind.name() == *l).collect();
        rows.push(summarize("total".into(), l.clone(), &sel));
    }
    rows
}

pub fn write_table_csv(rows: &[TableRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("class,loss,auroc_mean,auroc_std,n_runs\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.class,
            r.loss,
            fmt(r.auroc_mean),
            fmt(r.auroc_std),
            r.n_runs
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Run the paired grid over `classes` and write `table.csv`, `convergence.csv`
/// and one `metrics.json` per run under `out_dir`.
pub fn reproduce_table(
    train_set: &ImageSet,
    test_set: &ImageSet,
    experiment: &ExperimentConfig,
    classes: &[u8],
    out_dir: impl AsRef<Path>,
) -> Result<TableReport> {
    experiment.validate()?;
    if classes.is_empty() || classes.iter().any(|&c| c >= NUM_CLASSES) {
        return Err(Error::Config(format!(
            "classes must be a non-empty subset of 0..=9, got {classes:?}"
        )));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut runs = Vec::new();
    for &c in classes {
        let task = make_task(train_set, test_set, c, experiment.grid.train_cap())?;
        for arm in paired_grid_search(
            &task,
            &experiment.losses,
            &experiment.model,
            &experiment.grid,
            experiment.score,
        )? {
            runs.extend(arm);
        }
    }

    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    for r in &runs {
        r.write_json(runs_dir.join(run_file_name(r)))?;
    }
    let rows = summarize_table(&runs, classes);
    write_table_csv(&rows, out_dir.join("table.csv"))?;
    emit_convergence(&runs, out_dir.join("convergence.csv"))?;
    Ok(TableReport { rows, runs })
}

/// Stable file name for a run's `metrics.json`.
pub fn run_file_name(r: &RunResult) -> String {
    format!(
        "{}_{}_z{}_lr{:e}_s{}.json",
        r.task,
        r.loss.kind.name(),
        r.hyper.latent_dim,
        r.hyper.learning_rate,
        r.seed
    )
}

/// Per-epoch mean / std / min / max of successful runs, one block per loss.
pub fn emit_convergence(results: &[RunResult], out_path: impl AsRef<Path>) -> Result<()> {
    let path = out_path.as_ref();
    let mut losses: Vec<LossKind> = Vec::new();
    for r in results {
        if !losses.contains(&r.loss.kind) {
            losses.push(r.loss.kind);
        }
    }
    let mut out = String::from("epoch,loss_kind,mean,std,min,max\n");
    for kind in losses {
        let curves: Vec<Vec<f64>> = results
            .iter()
            .filter(|r| r.loss.kind == kind && r.succeeded())
            .map(|r| r.epoch_losses.clone())
            .collect();
        if curves.is_empty() {
            continue;
        }
        let s = convergence_stats(&curves)?;
        for e in 0..s.mean.len() {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                e + 1,
                kind.name(),
                s.mean[e],
                s.std[e],
                s.min[e],
                s.max[e]
            ));
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Default location of the dataset files for `dataset` under `root`.
pub fn dataset_dir(root: impl AsRef<Path>, dataset: DatasetId) -> PathBuf {
    root.as_ref().join(dataset.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageSet, Split};

    /// Tiny synthetic split: class 0 dark images, others bright.
    fn synthetic(count: usize, split: Split) -> ImageSet {
        let mut pixels = Vec::with_capacity(count * PIXELS);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = (i % 10) as u8;
            labels.push(label);
            for p in 0..PIXELS {
                let v = if label == 0 {
                    (p % 7) as u8 * 3
                } else {
                    120 + ((p * (label as usize + 3)) % 130) as u8
                };
                pixels.push(v);
            }
        }
        ImageSet::new(DatasetId::Mnist, split, pixels, labels).unwrap()
    }

    fn tiny_grid() -> HyperGrid {
        HyperGrid {
            latent_dims: vec![2, 3],
            learning_rates: vec![1e-3],
            seeds: vec![1],
            epochs: 2,
            batch_size: 4,
            optimizer: OptimizerKind::Adam,
            train_images: Some(6),
            subset_seed: 0,
        }
    }

    fn tiny_task() -> AnomalyTask {
        make_task(
            &synthetic(80, Split::Train),
            &synthetic(40, Split::Test),
            0,
            Some(TrainCap {
                max_images: 6,
                seed: 0,
            }),
        )
        .unwrap()
    }

    #[test]
    fn grid_defaults() {
        let full = HyperGrid::full();
        assert_eq!(full.points().len(), 5 * 4 * 3);
        assert_eq!(
            (full.epochs, full.batch_size, full.train_images),
            (30, 64, None)
        );
        let desk = HyperGrid::desk();
        assert_eq!(desk.points().len(), 8);
        assert_eq!((desk.epochs, desk.train_images), (5, Some(2000)));
        let mut bad = desk.clone();
        bad.seeds.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cardinality() {
        let task = tiny_task();
        let runs = grid_search(
            &task,
            &LossSpec::mse(),
            &CaeConfig::new(2),
            &tiny_grid(),
            ScoreKind::Mse,
        )
        .unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs
            .iter()
            .all(|r| r.succeeded() && r.epoch_losses.len() == 2));
        assert_eq!(runs[0].model.latent_dim, 2);
        assert_eq!(runs[1].model.latent_dim, 3);
    }

    #[test]
    fn zero_epochs_still_scores() {
        let task = tiny_task();
        let mut h = tiny_grid().points()[0].clone();
        h.epochs = 0;
        let r = train(&task, &LossSpec::lmse(), &CaeConfig::new(2), &h).unwrap();
        assert!(r.epoch_losses.is_empty());
        let a = r.auroc.unwrap();
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn deterministic_and_paired() {
        let task = tiny_task();
        let h = tiny_grid().points()[0].clone();
        let cfg = CaeConfig::new(2);
        let a = train(&task, &LossSpec::mse(), &cfg, &h).unwrap();
        let b = train(&task, &LossSpec::mse(), &cfg, &h).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());

        let arms = paired_grid_search(
            &task,
            &[LossSpec::mse(), LossSpec::lmse()],
            &cfg,
            &tiny_grid(),
            ScoreKind::Mse,
        )
        .unwrap();
        for (m, l) in arms[0].iter().zip(&arms[1]) {
            assert_eq!(m.hyper, l.hyper);
            assert_eq!(m.train_images, l.train_images);
        }
    }

    #[test]
    fn failures_are_recorded() {
        let task = tiny_task();
        let mut h = tiny_grid().points()[0].clone();
        h.batch_size = 0;
        let err = train(&task, &LossSpec::mse(), &CaeConfig::new(2), &h).unwrap_err();
        let r = failed_run(
            &task,
            &LossSpec::mse(),
            &CaeConfig::new(2),
            &h,
            ScoreKind::Mse,
            &err,
        );
        assert!(!r.succeeded());
        let rows = summarize_table(&[r], &[0]);
        assert_eq!(rows[0].n_runs, 0);
        assert_eq!(rows[0].n_failed, 1);
        assert_eq!(rows[0].auroc_mean, None);
    }

    #[test]
    fn table_and_convergence_files() {
        let dir = tempfile::tempdir().unwrap();
        let train_set = synthetic(80, Split::Train);
        let test_set = synthetic(40, Split::Test);
        let mut exp = ExperimentConfig::for_scale(Scale::Desk);
        exp.grid = tiny_grid();
        exp.grid.latent_dims = vec![2];
        exp.model = CaeConfig::new(2);
        let report = reproduce_table(&train_set, &test_set, &exp, &[0, 1], dir.path()).unwrap();
        assert_eq!(report.runs.len(), 2 * 2);
        let table = fs::read_to_string(dir.path().join("table.csv")).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "class,loss,auroc_mean,auroc_std,n_runs");
        assert_eq!(lines.len(), 1 + 2 * 2 + 2);
        assert!(lines[5].starts_with("total,mse,"));
        assert!(lines[6].starts_with("total,lmse,"));
        let conv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        assert!(conv.starts_with("epoch,loss_kind,mean,std,min,max\n1,mse,"));
        assert_eq!(conv.lines().count(), 1 + 2 * 2);
        assert_eq!(fs::read_dir(dir.path().join("runs")).unwrap().count(), 4);
    }

    #[test]
    fn single_run_convergence_is_degenerate() {
        let dir = tempfile::tempdir().unwrap();
        let task = tiny_task();
        let r = train(
            &task,
            &LossSpec::mse(),
            &CaeConfig::new(2),
            &tiny_grid().points()[0],
        )
        .unwrap();
        let path = dir.path().join("c.csv");
        emit_convergence(std::slice::from_ref(&r), &path).unwrap();
        for line in fs::read_to_string(&path).unwrap().lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[2], f[4]);
            assert_eq!(f[4], f[5]);
            assert_eq!(f[3].parse::<f64>().unwrap(), 0.0);
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::for_scale(Scale::Full);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let minimal: ExperimentConfig = serde_json::from_str(
            r#"{"grid":{"latent_dims":[4],"learning_rates":[0.001],"seeds":[1],"epochs":1,"batch_size":8},
                "model":{"latent_dim":4}}"#,
        )
        .unwrap();
        assert_eq!(minimal.losses.len(), 2);
        assert_eq!(minimal.grid.optimizer, OptimizerKind::Adam);
        assert_eq!(minimal.model.encoder_channels, vec![16, 32, 64]);

        let full: ExperimentConfig = serde_json::from_str(
            r#"{"grid":{"latent_dims":[4,16],"learning_rates":[0.001],"seeds":[1,2],
                        "epochs":5,"batch_size":64,"optimizer":"adam","train_images":2000},
                "model":{"latent_dim":16},
                "losses":[{"kind":"mse"},{"kind":"lmse","epsilon":1e-7}],
                "score":{"kind":"mse"}}"#,
        )
        .unwrap();
        full.validate().unwrap();
        assert_eq!(full.grid.points().len(), 4);
        assert_eq!(full.losses[1], LossSpec::lmse());
    }
}
