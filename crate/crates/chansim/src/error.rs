use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("power constraint violated: {0}")]
    Constraint(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("dataset hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
