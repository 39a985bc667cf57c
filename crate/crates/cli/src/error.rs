use std::path::Path;

use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<attnop_core::Error> for CliError {
    fn from(e: attnop_core::Error) -> Self {
        use attnop_core::Error as E;
        match e {
            E::NonFinite { .. } | E::ZeroNorm | E::NoConvergence(_) | E::Unstable(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
