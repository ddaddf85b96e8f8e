use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by target construction, sampler configuration and runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("schedule value out of range: {0}")]
    OutOfRange(f64),

    #[error("degenerate posterior at lambda = 1")]
    DegeneratePosterior,

    #[error("all log-weights are -inf")]
    AllWeightsZero,

    #[error("target `{0}` has no exact sampler")]
    NoExactSampler(String),

    #[error("non-finite state at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unknown label symbol `{0}`")]
    UnknownLabel(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
