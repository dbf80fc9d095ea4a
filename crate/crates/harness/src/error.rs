use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid corpus spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("bridge error at line {line}: {message}")]
    Bridge { line: usize, message: String },

    #[error("bridge timed out after {0:?} waiting for a reply")]
    Timeout(std::time::Duration),

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Core(#[from] mase_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
