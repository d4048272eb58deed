use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lmse_core::data::{load_split, make_task, DatasetId, ImageSet, Split};
use lmse_core::harness::{
    dataset_dir, emit_convergence, grid_search, reproduce_table, run_file_name, train_with_score,
    ExperimentConfig, HyperGrid, Scale,
};
use lmse_core::losses::{surface_grid, LossKind, LossSpec, SurfaceQuantity, DEFAULT_EPSILON};
use lmse_core::metrics::ScoreKind;
use lmse_core::optim::OptimizerKind;
use lmse_core::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(
    name = "lmse",
    version,
    about = "Logarithmic MSE experiments on a convolutional auto-encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on a one-class task and write metrics.json.
    Train(TrainArgs),
    /// Grid search for one class and one loss.
    Grid(GridArgs),
    /// Paired grid over all classes and both losses; writes table.csv.
    Table(TableArgs),
    /// Loss or gradient surface over (y, yhat) as CSV.
    Surface(SurfaceArgs),
    /// Numeric verification suite.
    Verify(VerifyArgs),
    /// Download dataset files from a mirror.
    #[cfg(feature = "fetch")]
    Fetch(FetchArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, default_value = "mnist")]
    dataset: DatasetId,
    /// Root holding one sub-directory per dataset (`<dir>/mnist`, `<dir>/fmnist`).
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
}

impl DataArgs {
    fn load(&self) -> Result<(ImageSet, ImageSet)> {
        let dir = dataset_dir(&self.data_dir, self.dataset);
        let train = load_split(&dir, self.dataset, Split::Train)
            .with_context(|| format!("loading {}", dir.display()))?;
        let test = load_split(&dir, self.dataset, Split::Test)?;
        Ok((train, test))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Score {
    Mse,
    Lmse,
}

#[derive(Args, Clone)]
struct LossArgs {
    /// mse, mae, msle, lmse, fl-mse, fl-mae or fl-msle.
    #[arg(long, default_value = "lmse")]
    loss: LossKind,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    /// Normalise FL base losses by their batch maximum.
    #[arg(long)]
    scale_trick: bool,
}

impl LossArgs {
    fn spec(&self) -> LossSpec {
        LossSpec::new(self.loss)
            .with_epsilon(self.eps)
            .with_scale_trick(self.scale_trick)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 0)]
    normal_class: u8,
    #[arg(long, default_value_t = 16)]
    latent: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Cap on normal-class training images.
    #[arg(long)]
    train_images: Option<usize>,
    #[arg(long, value_enum, default_value = "mse")]
    score: Score,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 0)]
    normal_class: u8,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// JSON experiment config; overrides --scale.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of classes.
    #[arg(long, value_delimiter = ',', default_values_t = 0u8..10)]
    classes: Vec<u8>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Quantity {
    Loss,
    Gradient,
}

#[derive(Args)]
struct SurfaceArgs {
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, value_enum, default_value = "loss")]
    quantity: Quantity,
    #[arg(long, default_value_t = 101)]
    resolution: usize,
    /// Magnitude above which cells are clipped and flagged.
    #[arg(long)]
    clip: Option<f64>,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[cfg(feature = "fetch")]
#[derive(Args)]
struct FetchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Base URL serving `<stem>.gz` files.
    #[arg(long)]
    mirror: String,
}

fn score_kind(s: Score, eps: f64) -> ScoreKind {
    match s {
        Score::Mse => ScoreKind::Mse,
        Score::Lmse => ScoreKind::Lmse { epsilon: eps },
    }
}

fn experiment(scale: Scale, config: Option<&Path>) -> Result<ExperimentConfig> {
    match config {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))
        }
        None => Ok(ExperimentConfig::for_scale(scale)),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let optimizer: OptimizerKind =
        serde_json::from_value(serde_json::Value::String(a.optimizer.clone()))
            .with_context(|| format!("unknown optimizer {:?}", a.optimizer))?;
    let grid = HyperGrid {
        latent_dims: vec![a.latent],
        learning_rates: vec![a.lr],
        seeds: vec![a.seed],
        epochs: a.epochs,
        batch_size: a.batch,
        optimizer,
        train_images: a.train_images,
        subset_seed: 0,
    };
    grid.validate()?;
    let (train, test) = a.data.load()?;
    let task = make_task(&train, &test, a.normal_class, grid.train_cap())?;
    let base = lmse_core::model::CaeConfig::new(a.latent);
    let result = train_with_score(
        &task,
        &a.loss.spec(),
        &base,
        &grid.points()[0],
        score_kind(a.score, a.loss.eps),
    )?;
    create_dir(&a.out)?;
    let path = a.out.join("metrics.json");
    result.write_json(&path)?;
    println!(
        "{} {} auroc={:.4} final_loss={:.6} ({:.1}s) -> {}",
        result.task,
        result.loss.kind.name(),
        result.auroc.unwrap_or(f64::NAN),
        result.epoch_losses.last().copied().unwrap_or(f64::NAN),
        result.wall_time_secs,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(a: GridArgs) -> Result<ExitCode> {
    let exp = experiment(a.scale, a.config.as_deref())?;
    let (train, test) = a.data.load()?;
    let task = make_task(&train, &test, a.normal_class, exp.grid.train_cap())?;
    let runs = grid_search(&task, &a.loss.spec(), &exp.model, &exp.grid, exp.score)?;
    let runs_dir = a.out.join("runs");
    create_dir(&runs_dir)?;
    for r in &runs {
        r.write_json(runs_dir.join(run_file_name(r)))?;
        match (r.auroc, &r.failure) {
            (Some(auc), None) => println!(
                "latent={:<3} lr={:<8e} seed={:<4} auroc={auc:.4}",
                r.hyper.latent_dim, r.hyper.learning_rate, r.seed
            ),
            (_, failure) => println!(
                "latent={:<3} lr={:<8e} seed={:<4} FAILED: {}",
                r.hyper.latent_dim,
                r.hyper.learning_rate,
                r.seed,
                failure.as_deref().unwrap_or("unknown")
            ),
        }
    }
    emit_convergence(&runs, a.out.join("convergence.csv"))?;
    let failed = runs.iter().filter(|r| !r.succeeded()).count();
    println!("{} runs, {failed} failed", runs.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_table(a: TableArgs) -> Result<ExitCode> {
    let exp = experiment(a.scale, a.config.as_deref())?;
    let (train, test) = a.data.load()?;
    let report = reproduce_table(&train, &test, &exp, &a.classes, &a.out)?;
    println!(
        "{:<6} {:<6} {:>8} {:>8} {:>6}",
        "class", "loss", "mean", "std", "runs"
    );
    for r in &report.rows {
        println!(
            "{:<6} {:<6} {:>8.4} {:>8.4} {:>6}",
            r.class,
            r.loss,
            r.auroc_mean.unwrap_or(f64::NAN),
            r.auroc_std.unwrap_or(f64::NAN),
            r.n_runs
        );
    }
    if report.failures() > 0 {
        println!("{} failed runs excluded", report.failures());
    }
    println!("-> {}", a.out.join("table.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_surface(a: SurfaceArgs) -> Result<ExitCode> {
    let quantity = match a.quantity {
        Quantity::Loss => SurfaceQuantity::Loss,
        Quantity::Gradient => SurfaceQuantity::Gradient,
    };
    let grid = surface_grid(&a.loss.spec(), quantity, a.resolution, a.clip)?;
    match a.out {
        Some(p) => {
            let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
            grid.write_csv(std::io::BufWriter::new(f))?;
        }
        None => grid.write_csv(std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let reports = run_suite(a.suite, a.seed)?;
    println!(
        "{:<20} {:>7} {:>10} {:>12}  result",
        "check", "trials", "violations", "worst"
    );
    for r in &reports {
        println!(
            "{:<20} {:>7} {:>10} {:>12.3e}  {}",
            r.name,
            r.trials,
            r.violations,
            r.worst,
            if r.passed { "PASS" } else { "FAIL" }
        );
        for (k, v) in &r.stats {
            println!("    {k} = {v:.3e}");
        }
    }
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&reports)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if reports.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[cfg(feature = "fetch")]
fn cmd_fetch(a: FetchArgs) -> Result<ExitCode> {
    let dir = dataset_dir(&a.data.data_dir, a.data.dataset);
    lmse_core::data::fetch(&dir, &a.mirror)?;
    println!("-> {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Train(a) => cmd_train(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Table(a) => cmd_table(a),
        Command::Surface(a) => cmd_surface(a),
        Command::Verify(a) => cmd_verify(a),
        #[cfg(feature = "fetch")]
        Command::Fetch(a) => cmd_fetch(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
