use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// One entry per violated invariant.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("channel use {t} outside the admissible range {min}..={max}")]
    Domain { t: usize, min: usize, max: usize },

    #[error("distance must be positive, got {0} m")]
    Distance(f64),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("matrix is not Hermitian positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular")]
    Singular,

    #[error("at least {required} trials are needed, got {got}")]
    InsufficientTrials { required: usize, got: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
