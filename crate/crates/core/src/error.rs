use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("optimizer state error: {0}")]
    State(String),
    #[error("tape error: {0}")]
    Tape(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::CoreError::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
