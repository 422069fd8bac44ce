use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    /// A fixed-length temporal operator received a clip of the wrong length.
    #[error("temporal length mismatch: operator is bound to T={expected}, input has T={actual}")]
    TemporalLength { expected: usize, actual: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("video has {available} frames but {requested} were requested")]
    InsufficientFrames { available: usize, requested: usize },

    #[error("canvas {height}x{width} is too small for a {grid}x{grid} grid (need at least {min} pixels per side)")]
    CanvasTooSmall {
        height: usize,
        width: usize,
        grid: usize,
        min: usize,
    },

    #[error("scene generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("unknown placement policy `{0}`")]
    UnknownPolicy(String),

    #[error("invalid container {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownPolicy(_) | Error::Usage(_) => 2,
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}
