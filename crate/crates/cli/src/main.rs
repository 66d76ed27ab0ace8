//! `apnet`: synthetic data, deformation augmentation, training, evaluation,
//! inference and gradient checking from one binary.

mod commands;
mod config;
mod palette;

use std::path::PathBuf;
use std::process::ExitCode;

use apnet_core::Error;
use clap::{Args, Parser, Subcommand};

/// Exit codes, one per error family. Code 2 is the argument parser's usage error.
pub mod exit {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 3;
    pub const DATA: u8 = 4;
    pub const NUMERIC: u8 = 5;
    pub const GRADCHECK: u8 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "apnet", version, about = "Attention-pyramid segmentation toolkit")]
struct Cli {
    /// Log more (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/val/test manifests split by series.
    Synth(SynthArgs),
    /// Write deformed copies of every image in a manifest.
    Augment(AugmentArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest and write a per-class report.
    Eval(EvalArgs),
    /// Segment one image.
    Infer(InferArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration; only its `[synth]` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generator seed (overrides `synth.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image side in pixels (overrides `synth.side`).
    #[arg(long)]
    pub side: Option<usize>,
    /// Number of series.
    #[arg(long, default_value_t = 12)]
    pub series: usize,
    /// Slices per series.
    #[arg(long, default_value_t = 4)]
    pub slices: usize,
    /// Series held out for validation.
    #[arg(long, default_value_t = 2)]
    pub val_series: usize,
    /// Series held out for testing.
    #[arg(long, default_value_t = 2)]
    pub test_series: usize,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Input manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for images, labels and `manifest.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration; `train.deform_grid` and `train.deform_displacement` are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the deformations (overrides `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Deformed copies per image.
    #[arg(long, default_value_t = 2)]
    pub copies: usize,
    /// Do not include the original images in the output.
    #[arg(long)]
    pub no_originals: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (overrides `paths.manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Validation manifest (overrides `paths.val_manifest`).
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Run directory for config.toml, history.csv and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experiment arm: apnet3+DA, apnet2+DA, pyramid-only+DA, pyramid-only+CDA or fcn+DA.
    #[arg(long)]
    pub preset: Option<String>,
    /// Training seed (overrides `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `train.max_iter`.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Overrides `train.base_lr`.
    #[arg(long)]
    pub base_lr: Option<f64>,
    /// Overrides `train.batch_size`.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Overrides `train.val_every`.
    #[arg(long)]
    pub val_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of the evaluation set.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for report.csv, report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Label value excluded from scoring.
    #[arg(long, default_value_t = apnet_core::IGNORE_LABEL)]
    pub ignore_label: u8,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint to run.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Grayscale PGM or PNG image with the model's input size.
    #[arg(long)]
    pub image: PathBuf,
    /// Directory for labels.png and overlay.png.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the color overlay.
    #[arg(long)]
    pub no_overlay: bool,
    /// Overlay opacity of class colors.
    #[arg(long, default_value_t = 0.5)]
    pub opacity: f32,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = apnet_core::gradcheck::suite::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

/// A gradient check failed; reported with its own exit code.
#[derive(Debug)]
pub struct GradcheckFailed(pub usize);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} gradient check(s) failed", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<GradcheckFailed>() {
            return exit::GRADCHECK;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Argument(_) | Error::Generation(_) => exit::CONFIG,
                Error::Shape(_) | Error::Data(_) | Error::Decode { .. } | Error::Io { .. } => exit::DATA,
                Error::Numeric(_) | Error::Diverged(_) | Error::UndefinedMetric(_) => exit::NUMERIC,
            };
        }
        if cause.is::<std::io::Error>() {
            return exit::DATA;
        }
    }
    exit::OTHER
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Augment(a) => commands::augment(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_families_map_to_distinct_codes() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(Error::Config("x".into())), exit::CONFIG);
        assert_eq!(code(Error::Data("x".into())), exit::DATA);
        assert_eq!(code(Error::Diverged("x".into())), exit::NUMERIC);
        assert_eq!(exit_code(&anyhow::Error::from(GradcheckFailed(1))), exit::GRADCHECK);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), exit::OTHER);
        let wrapped = anyhow::Error::from(Error::Config("x".into())).context("outer");
        assert_eq!(exit_code(&wrapped), exit::CONFIG);
    }
}
