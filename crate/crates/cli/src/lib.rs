//! Command implementations behind the `apemo` binary.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_frontier, cmd_report, cmd_run_llm, cmd_simulate, cmd_validate_config, ReportArgs,
    ReportOutcome, RunArgs, RunManifest, RunOutcome,
};
pub use config::{ExperimentConfig, LoadedConfig};

use apemo_core::ApemoError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Transport(_) => 3,
            CliError::EmptyInput(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<ApemoError> for CliError {
    fn from(e: ApemoError) -> Self {
        match e {
            ApemoError::InvalidConfig(m) => CliError::Config(m),
            ApemoError::Schema { .. } => CliError::Config(e.to_string()),
            ApemoError::Transport { .. } => CliError::Transport(e.to_string()),
            ApemoError::InvalidInput(m) => CliError::EmptyInput(m),
            other => CliError::Other(other.to_string()),
        }
    }
}
