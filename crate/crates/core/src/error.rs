use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training/evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed row at line {line} of {path}: {reason}")]
    MalformedRow { path: PathBuf, line: usize, reason: String },

    #[error("series too short: {len} rows, need at least {n_steps}")]
    EmptySeries { len: usize, n_steps: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("invalid arguments: {0}")]
    InvalidArgs(String),

    #[error("index {t} out of range (valid {lo}..{hi})")]
    OutOfRange { t: usize, lo: usize, hi: usize },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("non-finite network output")]
    NonFiniteOutput,

    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("network error: {0}")]
    Network(String),

    #[error("annotation oracle timed out with {pending} pending queries")]
    OracleTimeout { pending: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
