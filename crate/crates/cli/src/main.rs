//! `famus`: experiment runner for meta-learned sample reweighting.
//!
//! Exit codes: 0 success, 1 gradient check outside tolerance, 2 configuration
//! error, 3 numeric failure during training, 4 I/O failure.

mod commands;
mod config;
mod gradcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
    #[error("gradient check failed")]
    CheckFailed,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<famus_core::Error> for CliError {
    fn from(e: famus_core::Error) -> Self {
        use famus_core::Error as E;
        match e {
            E::Numeric { .. } => CliError::Numeric(e.to_string()),
            E::Io { .. } | E::Csv { .. } => CliError::Io(e.to_string()),
            E::Dimension(_) | E::Validation(_) | E::Config(_) => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "famus", version, about = "Meta-learned sample reweighting with sampled layer-wise meta gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Experiment config (TOML, or JSON when the name ends in .json).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for library parallelism (1 is fully deterministic).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every configured strategy and write metrics and summaries.
    Train(Common),
    /// Compare analytic gradients against finite differences on tiny instances.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Perturbs the analytic meta gradient to exercise the failure path.
        #[arg(long, hide = true)]
        sabotage: bool,
    },
    /// Run every configured strategy and write a comparison table.
    Ablate(Common),
    /// Write the configured train/val/test sets as CSV.
    Datagen(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Train(c) | Command::Ablate(c) | Command::Datagen(c) => c,
        Command::Gradcheck { common, .. } => common,
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(c) => commands::train(&c),
        Command::Ablate(c) => commands::ablate(&c),
        Command::Datagen(c) => commands::datagen(&c),
        Command::Gradcheck { common, sabotage } => gradcheck::run(&common, sabotage),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
