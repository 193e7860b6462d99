//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Error, Debug, Clone)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("jet order {requested} exceeds the supported maximum {max}")]
    JetOrderUnsupported { requested: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation on the singular locus: {0}")]
    SingularLocus(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("divergent pairing: {0}")]
    Divergent(String),

    #[error("inconsistent result: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, Error>;
