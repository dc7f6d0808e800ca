//! Command-line interface for CATE estimation on delimited data and for
//! Monte Carlo experiments.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

mod config;
mod data;
mod estimate;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hdcate::Error as HdError;

#[derive(Debug)]
pub enum CliErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    kind: CliErrorKind,
    message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            kind: CliErrorKind::Config,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            kind: CliErrorKind::Data,
            message: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError {
            kind: CliErrorKind::Numerical,
            message: msg.into(),
        }
    }

    /// Maps library errors raised during estimation: numerical failures keep
    /// their own exit code, everything else is a data problem.
    pub fn from_estimation(e: HdError) -> Self {
        match e {
            HdError::Numerical(_) => CliError::numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            CliErrorKind::Config => 1,
            CliErrorKind::Data => 2,
            CliErrorKind::Numerical => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "hdcate",
    about = "CATE estimation under high-dimensional confounding: lasso first stage, \
             doubly-robust local linear second stage, multiplier-bootstrap bands"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a CATE curve with confidence bands from a CSV dataset.
    Estimate,
    /// Run a Monte Carlo experiment and aggregate coverage/accuracy.
    Simulate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot configure thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::config("--config <path> is required"))?;

    match cli.command {
        Command::Estimate => {
            let text = std::fs::read_to_string(config_path)
                .map_err(|e| CliError::config(format!("cannot read config: {e}")))?;
            let mut config: config::EstimateConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("cannot parse config: {e}")))?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            estimate::run(&config, cli.output.as_deref())
        }
        Command::Simulate => simulate::run(config_path, cli.seed, cli.output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code())
        }
    }
}
