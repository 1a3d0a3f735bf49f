use thiserror::Error;

/// Errors produced by the valuation, privacy and evaluation pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector is not allowed here (cosine distance or L2 normalization)")]
    ZeroVector,

    #[error("label {label} is out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed data: {0}")]
    Data(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("exhaustive enumeration over {n} points exceeds the limit of {limit}")]
    EnumerationLimit { n: usize, limit: usize },

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("privacy accounting failed: {0}")]
    Accounting(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
