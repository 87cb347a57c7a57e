use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("chain failure: {0}")]
    Chain(String),
    #[error("{path}: container version {found} is not readable by this build (expects {expected})")]
    Version { path: PathBuf, found: String, expected: String },
    #[error("{path}: dataset digest {found} does not match the fitted dataset {expected}")]
    HashMismatch { path: PathBuf, found: String, expected: String },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: u64, message: String },
    #[error("{0}")]
    Container(String),
    #[error("{0}")]
    Model(#[from] lfda::error::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit status: 2 configuration, 3 chain failure, 4 container
    /// version mismatch, 5 dataset digest mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Chain(_) => 3,
            CliError::Version { .. } => 4,
            CliError::HashMismatch { .. } => 5,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
