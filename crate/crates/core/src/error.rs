use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed system spec: {0}")]
    MalformedSpec(String),

    #[error("matrix at index {index} is singular (|det| = {det:e})")]
    SingularMatrix { index: usize, det: f64 },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid matrix file {path}: {reason}")]
    MatrixFile { path: PathBuf, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("initial vector must be nonzero")]
    ZeroVector,

    #[error("non-finite value encountered at step {0}")]
    NonFinite(usize),

    #[error("invalid window (n = {n}, m = {m}): n must exceed m")]
    InvalidWindow { n: usize, m: usize },

    #[error("horizon {horizon} too small for window threshold {threshold}")]
    HorizonTooSmall { horizon: usize, threshold: usize },

    #[error("sequence is only defined for n < {len}, requested horizon {requested}")]
    HorizonExceedsData { len: usize, requested: usize },

    #[error("QR breakdown at step {0}: matrix numerically singular")]
    QrBreakdown(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
