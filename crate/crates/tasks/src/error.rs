use misac_chansim::SimError;
use misac_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:.6e}): {detail}"
    )]
    NonFinite { epoch: usize, batch: usize, param_norm: f64, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TaskError>;
