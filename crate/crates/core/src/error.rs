use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),

    #[error("point is outside the ball: squared norm {norm_sq} >= 1/c = {limit}")]
    OutsideBall { norm_sq: f64, limit: f64 },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("block rotations need an even dimension, got {0}")]
    OddDimension(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("backward needs a scalar output, got shape {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    #[error("true entity {0} missing from its filter set")]
    MissingFromFilter(usize),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint {expected}, dataset {actual}")]
    VocabMismatch { expected: String, actual: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
