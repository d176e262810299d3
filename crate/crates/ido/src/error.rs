//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyCloud,

    #[error("{path}:{line}: {message}")]
    MalformedFile {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("point cloud has zero spatial extent")]
    ZeroExtent,

    #[error("target count {target} out of range 1..={max}")]
    TargetCountOutOfRange { target: usize, max: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ridge penalty must be positive, got {0}")]
    NonPositiveLambda(f64),

    #[error("non-finite value in sample {sample} at iteration {iteration}")]
    NonFiniteSample { sample: usize, iteration: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("map file fingerprint does not match the model context (pass force to override)")]
    FingerprintMismatch,

    #[error("perturbation spec out of range: {0}")]
    SpecOutOfRange(String),

    #[error("unknown perturbation name: {0}")]
    UnknownPerturbation(String),

    #[error("pair directory inconsistent: {0}")]
    PairMismatch(String),

    #[error("missing trained maps for algorithm {0}")]
    MissingMaps(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(
        path: impl Into<PathBuf>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::MalformedFile {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
