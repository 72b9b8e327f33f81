use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no frames")]
    NoFrames,

    #[error("unsorted timestamps in {0}")]
    UnsortedTimestamps(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {what} has {actual} entries, expected {expected}")]
    LengthMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported version {found} in {what} (supported: {supported})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("corrupt {what}: {reason}")]
    Corrupt { what: String, reason: String },

    #[error("no fixations inside the {height}x{width} grid")]
    NoFixations { height: usize, width: usize },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("empty prediction")]
    EmptyPrediction,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
