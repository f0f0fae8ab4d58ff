//! The `platoon` command line: synthesize or ingest datasets, train models,
//! generate platoon trajectories and score them.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use platoon_core::Error;

pub use config::RunConfig;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, missing inputs the user has to supply.
    Usage(String),
    /// Unreadable or inconsistent data files.
    Data(String),
    /// Divergence, non-finite values, or a failed gradient check.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            Error::NonFinite { .. } | Error::Diverged(_) => CliError::Numeric(e.to_string()),
            Error::Shape(_)
            | Error::Data(_)
            | Error::ModelFormat(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "platoon",
    version,
    about = "Platoon trajectory generation with car-following models"
)]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the fully resolved configuration.
    Config,
    /// Simulate a synthetic dataset and split it into train/eval files.
    Synth,
    /// Parse a trajectory CSV, extract platoons and split them.
    Ingest,
    /// Train an LSTM car-following model (or a sweep of schedules).
    Train {
        /// Continue from `<out>/checkpoint.json`.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed epochs, leaving a checkpoint.
        #[arg(long)]
        stop_after: Option<u32>,
    },
    /// Generate every follower of each evaluation platoon.
    Generate,
    /// Score generated trajectories against the evaluation set.
    Evaluate,
    /// Compare the backward pass with finite differences.
    Gradcheck {
        /// Scale the analytic gradient by (1 + PERTURB), to check that the
        /// comparison notices.
        #[arg(long, hide = true)]
        perturb: Option<f64>,
    },
}

/// Parses the config, applies overrides and runs one command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(cli.seed, &cli.out)?;
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Synth => commands::synth(&cfg, &cli.out),
        Command::Ingest => commands::ingest(&cfg, &cli.out),
        Command::Train { resume, stop_after } => commands::train(&cfg, &cli.out, resume, stop_after),
        Command::Generate => commands::generate(&cfg, &cli.out),
        Command::Evaluate => commands::evaluate(&cfg, &cli.out),
        Command::Gradcheck { perturb } => commands::gradcheck(&cfg, &cli.out, perturb),
    }
}
