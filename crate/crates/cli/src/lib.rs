//! Experiment front-end: config parsing and validation, subcommand logic,
//! sweep orchestration, and report emission. This crate is the only place
//! with filesystem side effects.

pub mod commands;
pub mod config;

use thiserror::Error;

/// Command failures, each mapped to a stable process exit code:
/// 0 success, 1 config (or I/O) error, 2 gradient-check failure,
/// 3 training failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error("training failure: {0}")]
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Gradcheck(_) => 2,
            CliError::Training(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}
