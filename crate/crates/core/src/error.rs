use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree along a named axis.
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    Shape {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing artifact {path}: {what}")]
    MissingArtifact { path: PathBuf, what: String },

    /// A loss, gradient or activation stopped being finite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("pool too small: {required} synthetic entries required, {available} available")]
    PoolTooSmall { required: usize, available: usize },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            axis,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short machine-readable category used by the CLI for exit codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::InvalidInput(_) | Error::PoolTooSmall { .. } => "input",
            Error::Config(_) => "config",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Numeric(_) => "numeric",
            Error::Format { .. } | Error::Io { .. } | Error::Image { .. } => "io",
            Error::Json(_) | Error::Csv(_) => "io",
        }
    }
}
