//! Experiment driver for `dplens`: reads a JSON config, runs one
//! subcommand, and writes CSV and SVG artifacts to the output directory.

mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;

const DEFAULT_OUT: &str = "dplens_out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dplens::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dplens", version, about = "Loss-improvement analysis for DP optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the config's `seeds`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "DPLENS_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for seed sweeps and Monte-Carlo trials.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Noise multiplier σ(B) for the configured privacy budget.
    Calibrate,
    /// Closed-form improvement at the configured batch size.
    Predict,
    /// Closed-form improvement over a batch-size grid.
    SweepBatch,
    /// Monte-Carlo improvement vs the closed form on a quadratic task.
    Oracle,
    /// DP training on the configured task.
    Train,
    /// Public then private training, or a mixed-data schedule.
    Continual,
    /// SGD / clip / noise / DP-SGD from random and pre-trained inits.
    Fourway,
    /// Membership-inference comparison of non-DP and DP models.
    Mia,
    /// Improvement terms vs batch size for the two curvature regimes.
    FigBreakdown,
}

/// Resolved inputs of one invocation.
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dplens: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&out)?;
    let ctx = Context { config, out };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cli.command, &ctx))
}
