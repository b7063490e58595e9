use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, estimators and experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: need at least one agent")]
    InvalidDimension(usize),

    #[error("agent index {index} out of range for {agents} agents")]
    InvalidAgent { index: usize, agents: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("objective returned a non-finite value at {point:?}")]
    NumericalOverflow { point: Vec<f64> },

    #[error("exact enumeration needs 2^{dim} evaluations; limit is d <= {limit}")]
    EnumerationLimit { dim: usize, limit: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid config:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("output path {path} is not writable: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
