use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller-side precondition was violated (non-scalar loss, missing gradient, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// An input lies outside the mathematical domain of a loss or transform.
    #[error("domain error at element {index}: {message}")]
    Domain { index: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported image shape {rows}x{cols} in {path} (expected 28x28)")]
    UnsupportedShape { path: PathBuf, rows: u32, cols: u32 },

    #[error("no training samples for normal class {0}")]
    EmptyTask(u8),

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("singular normal equations")]
    Singular,

    #[error("io error on {path}: {source}")]
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

    pub(crate) fn domain(index: usize, message: impl Into<String>) -> Self {
        Error::Domain {
            index,
            message: message.into(),
        }
    }
}
