use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: String, index: usize },
    #[error("invalid axis {axis} for rank-{rank} grid function")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("axis {axis} is not a periodic spatial axis")]
    NotSpatial { axis: usize },
    #[error("cutoff {cutoff} on axis {axis} needs at least {} grid points, found {len}", 2 * cutoff)]
    Cutoff { axis: usize, cutoff: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("solver diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("non-finite loss at epoch {epoch}")]
    NanLoss { epoch: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidAxis { .. } => "invalid_axis",
            Error::NotSpatial { .. } => "not_spatial",
            Error::Cutoff { .. } => "cutoff",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Diverged { .. } => "diverged",
            Error::NanLoss { .. } => "nan_loss",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
