use std::path::PathBuf;

use misac_chansim::SimError;
use misac_tasks::TaskError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid configuration; the CLI exits with code 2.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what} hash mismatch: expected {expected}, found {found}")]
    HashMismatch { what: &'static str, expected: String, found: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_)
            | Self::Task(TaskError::Config(_) | TaskError::Sim(SimError::Config(_)))
            | Self::Sim(SimError::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
