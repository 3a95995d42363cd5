//! `entroloss`: generate data, train, sweep, check gradients, plot.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical failure, 5 gate
//! failure.

mod config;
mod manifest;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use entroloss::data::{self, Dataset, SynthSpec, IMAGE_SIDE};
use entroloss::entropy::{loss_grad_check, BinaryOutcome, LossSpec, ProbabilityPair};
use entroloss::model::{Model, ModelConfig};
use entroloss::nn::Tensor;
use entroloss::training::{self, loss_for_alpha, Metrics, OptimizerKind, SweepOptions, DEFAULT_PATIENCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use config::RunConfig;
use manifest::{RunManifest, MANIFEST_NAME};

const CHECKPOINT_NAME: &str = "model.entl";
const REPORT_NAME: &str = "report.csv";
const PLOT_NAME: &str = "loss_curve.svg";
const SWEEP_LONG_NAME: &str = "sweep_long.csv";
const SWEEP_GRID_NAME: &str = "sweep_grid.csv";
/// Tolerance of the standalone loss-gradient check.
const LOSS_GRAD_TOLERANCE: f64 = 1e-6;
const LOSS_GRAD_STEP: f64 = 1e-6;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }

    fn gate(message: impl Into<String>) -> Self {
        Failure {
            code: 5,
            message: message.into(),
        }
    }
}

impl From<entroloss::Error> for Failure {
    fn from(e: entroloss::Error) -> Self {
        use entroloss::Error as E;
        let code = match &e {
            E::Io { .. } | E::Decode { .. } | E::UnsupportedImage { .. } | E::Checkpoint(_) | E::EmptyDataset => 3,
            E::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 3,
            E::NonFinite { .. } => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "entroloss", version, about = "Havrda-Charvat entropy losses for binary frame classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as PNG files plus a manifest.
    GenData(GenDataArgs),
    /// Train one model and write checkpoint, loss report, plot and manifest.
    Train(TrainArgs),
    /// Train over an alpha x epochs grid and write the accuracy tables.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients of the network loss.
    Gradcheck(GradcheckArgs),
    /// Render a loss report as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    n: usize,
    /// Share of informative frames.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, env = "ENTROLOSS_SEED", default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the added pixel noise.
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by `train` and `sweep`; each overrides the config file.
#[derive(Args)]
struct RunArgs {
    /// Dataset root with `informative/` and `uninformative/` subdirectories.
    #[arg(long)]
    data: PathBuf,
    /// TOML file with `[model]`, `[train]` and `[split]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Seed for initialization, batching, dropout and the split.
    #[arg(long, env = "ENTROLOSS_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Conv widths, e.g. `128,64,32,16,8`; a pool follows each layer.
    #[arg(long, value_delimiter = ',')]
    conv_channels: Option<Vec<usize>>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Havrda-Charvat parameter; 1 selects the Shannon loss.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Patience of the overfitting detector used for the plot.
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    patience: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    epoch_counts: Vec<usize>,
    /// Train the alphas one after another instead of concurrently.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Number of randomly chosen parameters to perturb.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, env = "ENTROLOSS_SEED", default_value_t = 0)]
    seed: u64,
    /// TOML file whose `[model]` table describes the network.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the run manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    patience: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.code == 2 {
                eprintln!("run `entroloss --help` for usage");
            }
            ExitCode::from(f.code)
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn cmd_gen_data(a: GenDataArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        noise_sigma: a.noise,
        ..SynthSpec::new(a.n, a.seed).with_fraction(a.fraction)
    };
    let ds = data::synth_generate(&spec)?;
    create_dir(&a.out)?;
    let entries = data::export_dataset(&ds, &a.out)?;
    let (u, i) = ds.class_counts();
    println!("wrote {} frames ({i} informative, {u} uninformative) to {}", entries.len(), a.out.display());
    RunManifest::new(&spec)?
        .seed("data", a.seed)
        .count_dataset("all", &ds)
        .artifact(data::MANIFEST_FILE)
        .artifact("informative/")
        .artifact("uninformative/")
        .write(&a.out.join(MANIFEST_NAME))
}

/// Config file, then flags, then validation.
fn resolve_config(run: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(run.config.as_deref())?;
    if let Some(seed) = run.seed {
        cfg.set_seed(seed);
    }
    if let Some(lr) = run.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(bs) = run.batch_size {
        cfg.train.batch_size = bs;
    }
    if let Some(opt) = run.optimizer {
        cfg.train.optimizer = match opt {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        };
    }
    if let Some(ch) = &run.conv_channels {
        cfg.model = cfg.model.clone().with_conv_channels(ch.clone());
    }
    if let Some(f) = run.train_fraction {
        cfg.split.train_fraction = f;
    }
    if cfg.model.input_side != IMAGE_SIDE {
        return Err(Failure::usage(format!(
            "model input_side must be {IMAGE_SIDE} to match loaded frames, got {}",
            cfg.model.input_side
        )));
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn load_split(run: &RunArgs, cfg: &RunConfig) -> Result<(Dataset, Dataset, Dataset), Failure> {
    let ds = data::load_dataset(&run.data)?;
    let (train_ds, val_ds) = if cfg.split.grouped {
        data::split_grouped(&ds, cfg.split.train_fraction, cfg.split.seed)?
    } else {
        data::split(&ds, cfg.split.train_fraction, cfg.split.seed)?
    };
    Ok((ds, train_ds, val_ds))
}

fn metrics_line(m: &Metrics) -> String {
    let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    format!(
        "accuracy={:.4} sensitivity={} specificity={} tp={} fp={} tn={} fn={} (positive class: informative)",
        m.accuracy,
        rate(m.sensitivity),
        rate(m.specificity),
        m.tp,
        m.fp,
        m.tn,
        m.fn_
    )
}

fn overfitting_onset(records: &[training::EpochRecord], patience: usize) -> Option<usize> {
    // Too few records simply means nothing to report.
    training::detect_overfitting(records, patience).ok().flatten()
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = resolve_config(&a.run)?;
    if let Some(alpha) = a.alpha {
        cfg.train.loss = loss_for_alpha(&cfg.train.loss, alpha)?;
    }
    if let Some(epochs) = a.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.train.validate()?;
    let (ds, train_ds, val_ds) = load_split(&a.run, &cfg)?;
    create_dir(&a.run.out)?;

    let model = Model::build(cfg.model.clone())?;
    let report = training::train(model, &train_ds, &val_ds, &cfg.train)?;

    let out = &a.run.out;
    report.model.save_checkpoint(&out.join(CHECKPOINT_NAME))?;
    training::write_report_csv(&out.join(REPORT_NAME), &report.records)?;
    let onset = overfitting_onset(&report.records, a.patience);
    write_text(&out.join(PLOT_NAME), &plot::render_loss_svg(&report.records, onset))?;
    RunManifest::new(&cfg)?
        .seed("model", cfg.model.seed)
        .seed("train", cfg.train.seed)
        .seed("split", cfg.split.seed)
        .count_dataset("all", &ds)
        .count_dataset("train", &train_ds)
        .count_dataset("val", &val_ds)
        .artifact(CHECKPOINT_NAME)
        .artifact(REPORT_NAME)
        .artifact(PLOT_NAME)
        .write(&out.join(MANIFEST_NAME))?;

    if let Some(i) = onset {
        println!("overfitting onset after epoch {}", report.records[i].epoch);
    }
    println!("final: {}", metrics_line(&report.metrics));
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = resolve_config(&a.run)?;
    let (ds, _, _) = load_split(&a.run, &cfg)?;
    create_dir(&a.run.out)?;
    let opts = SweepOptions {
        train_fraction: cfg.split.train_fraction,
        split_seed: cfg.split.seed,
        parallel: !a.sequential,
    };
    let table = training::sweep(&cfg.train, &a.alphas, &a.epoch_counts, &ds, &cfg.model, &opts)?;

    let out = &a.run.out;
    table.write_long_csv(&out.join(SWEEP_LONG_NAME))?;
    table.write_grid_csv(&out.join(SWEEP_GRID_NAME))?;
    RunManifest::new(&cfg)?
        .seed("model", cfg.model.seed)
        .seed("train", cfg.train.seed)
        .seed("split", cfg.split.seed)
        .count_dataset("all", &ds)
        .artifact(SWEEP_LONG_NAME)
        .artifact(SWEEP_GRID_NAME)
        .write(&out.join(MANIFEST_NAME))?;

    for c in &table.cells {
        match &c.outcome {
            Ok(m) => println!("alpha={:?} epochs={}: {}", c.alpha, c.epochs, metrics_line(m)),
            Err(e) => println!("alpha={:?} epochs={}: FAILED: {e}", c.alpha, c.epochs),
        }
    }
    if table.succeeded() == 0 {
        return Err(Failure::numerical("every sweep cell failed"));
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let spec = loss_for_alpha(&LossSpec::shannon(), a.alpha)?;
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.model.seed = a.seed;
    let model = Model::build(cfg.model.clone())?;

    let side = cfg.model.input_side;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let image = Tensor::new(vec![1, side, side], (0..side * side).map(|_| rng.random()).collect())?;
    let target = ProbabilityPair::dirac(BinaryOutcome::Informative);
    let report = model.grad_check(&image, target, &spec, a.samples, a.step, a.seed)?;
    let loss_error = loss_grad_check(&spec, LOSS_GRAD_STEP)?;

    create_dir(&a.out)?;
    RunManifest::new(&GradcheckRecord {
        model: &cfg.model,
        alpha: a.alpha,
        samples: a.samples,
        step: a.step,
        tolerance: a.tolerance,
    })?
    .seed("model", a.seed)
    .write(&a.out.join(MANIFEST_NAME))?;

    println!(
        "network: max relative error {:.3e} over {} parameters (alpha {}, step {:e})",
        report.max_relative_error,
        report.entries.len(),
        a.alpha,
        a.step
    );
    println!("loss: max relative error {loss_error:.3e} (step {LOSS_GRAD_STEP:e})");
    // NaN errors must fail the gate too.
    let within = |err: f64, tol: f64| err <= tol;
    if !within(report.max_relative_error, a.tolerance) {
        return Err(Failure::gate(format!(
            "network gradient error {:.3e} exceeds {:e}",
            report.max_relative_error, a.tolerance
        )));
    }
    if !within(loss_error, LOSS_GRAD_TOLERANCE) {
        return Err(Failure::gate(format!(
            "loss gradient error {loss_error:.3e} exceeds {LOSS_GRAD_TOLERANCE:e}"
        )));
    }
    println!("PASS");
    Ok(())
}

#[derive(serde::Serialize)]
struct GradcheckRecord<'a> {
    model: &'a ModelConfig,
    alpha: f64,
    samples: usize,
    step: f64,
    tolerance: f64,
}

fn cmd_plot(a: PlotArgs) -> Result<(), Failure> {
    let records = training::read_report_csv(&a.report)?;
    if records.is_empty() {
        return Err(Failure::usage(format!("{} has no rows", a.report.display())));
    }
    let onset = overfitting_onset(&records, a.patience);
    write_text(&a.out, &plot::render_loss_svg(&records, onset))?;
    let manifest_path = a.out.with_extension("manifest.json");
    RunManifest::new(&serde_json::json!({ "report": a.report, "patience": a.patience }))?
        .artifact(
            a.out
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        )
        .write(&manifest_path)?;
    match onset {
        Some(i) => println!("overfitting onset after epoch {} (record {i})", records[i].epoch),
        None => println!("no overfitting onset detected"),
    }
    Ok(())
}
