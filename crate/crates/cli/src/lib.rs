//! Command-line front end: configuration, subcommands, sensitivity sweeps
//! and CSV output.

pub mod app;
pub mod format;
pub mod sweep;

use thiserror::Error;

pub use app::{run, GRAMMAR};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Solver(#[from] ergodic_mfg::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(ergodic_mfg::Error::Config { .. })
            | CliError::Solver(ergodic_mfg::Error::InvalidParameter { .. }) => 2,
            CliError::Solver(_) | CliError::Io(_) => 1,
        }
    }
}
