//! Scenario files in, trajectories, metrics and certificates out.

mod commands;
mod output;
pub mod scenario;
mod setup;

pub use commands::{cmd_certify, cmd_run, cmd_sweep, run_scenario, Overrides, RunOutcome};
pub use output::{trajectory_csv, TRAJECTORY_FIXED_COLUMNS};
pub use scenario::Scenario;
pub use setup::{prepare, ConstantsSource, Prepared};

use rhc_core::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Certification(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(_) | CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Certification(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Run(_) => "run",
            CliError::Certification(_) => "certification",
            CliError::Io(_) => "io",
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Diverged { .. } | Error::Estimation { .. } | Error::RankDeficient { .. } => CliError::Run(msg),
            Error::Certification(_) => CliError::Certification(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
