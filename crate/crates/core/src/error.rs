use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the conditioning, rendering and evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{field}: {message}")]
    Format { field: String, message: String },

    #[error("unconstrained motion region: the motion mask is nonempty but carries no trajectory")]
    UnconstrainedMotion,

    #[error("point {index} lies at or behind the camera plane (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attach a file path to a format error so diagnostics name both file and field.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Io { .. } | Error::File { .. } => self,
            other => Error::File {
                path: path.into(),
                message: other.to_string(),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
