//! `advlab` command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running a command.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use config::{DataSpec, RunConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ADVLAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "advlab", version, about = "Adversarial training laboratory")]
pub struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (default: $ADVLAB_OUT, else ./advlab-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint and per-epoch history.
    Train(TrainArgs),
    /// Attack a dataset with PGD and export the adversarial copy.
    Attack(AttackArgs),
    /// Evaluate one or more checkpoints and write reports.
    Eval(EvalArgs),
    /// Materialize the corruption suite of a dataset as IDX files.
    Corrupt(CorruptArgs),
    /// Print a comparison table of existing reports.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct AttackFlags {
    /// ℓ∞ budget.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Number of PGD steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step size (default 2.5·ε/steps).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Start from a uniform point in the ε-ball.
    #[arg(long)]
    pub random_start: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// std, adv or adv_plus.
    #[arg(long)]
    pub mode: Option<String>,
    /// Training data (`blobs:...` or `idx:images=..,labels=..`).
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Floor of the cosine schedule (default lr·1e-4).
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Label-augmentation factor (adv_plus).
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    /// Checkpoint to attack.
    #[arg(long)]
    pub model: PathBuf,
    /// Data to perturb (default: held-out blob split).
    #[arg(long)]
    pub data: Option<String>,
    /// Attack seed (random start).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub attack: AttackFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// One or more checkpoints.
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
    /// Evaluation data (default: held-out blob split).
    #[arg(long)]
    pub data: Option<String>,
    /// Attack seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub attack: AttackFlags,
    /// Skip the robust-error evaluation.
    #[arg(long)]
    pub no_attack: bool,
    /// Evaluate on the corruption suite.
    #[arg(long)]
    pub corruptions: bool,
    /// Seed of the corruption suite.
    #[arg(long)]
    pub suite_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CorruptArgs {
    /// Data to corrupt (default: held-out blob split).
    #[arg(long)]
    pub data: Option<String>,
    /// Seed of the corruption suite.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Report JSON files; the first is the baseline.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

/// Failure of a CLI invocation.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub(crate) fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Runs a parsed invocation.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| file.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("advlab-out"));
    match cli.command {
        Command::Train(a) => commands::train(&a, &file, &out),
        Command::Attack(a) => commands::attack(&a, &file, &out),
        Command::Eval(a) => commands::eval(&a, &file, &out),
        Command::Corrupt(a) => commands::corrupt(&a, &file, &out),
        Command::Report(a) => commands::report(&a),
    }
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code, printing diagnostics to stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
