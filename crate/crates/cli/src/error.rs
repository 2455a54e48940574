//! CLI error classification: configuration/I-O problems exit with code 2,
//! numerical runtime failures with code 3.

use blinky_bss::BssError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{}: {err}", path.display()))
    }
}

impl From<BssError> for CliError {
    fn from(err: BssError) -> Self {
        match err {
            BssError::SingularUpdate { .. }
            | BssError::DegenerateNmf(_)
            | BssError::NonpositiveVariance(_)
            | BssError::Numerical(_) => CliError::Runtime(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
