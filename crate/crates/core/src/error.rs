use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file did not match its declared layout.
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("test chip {chip_id} appears in training manifest {manifest}")]
    Leakage { chip_id: String, manifest: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { field: field.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable code used by the command-line driver.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Format { .. } => "E_FORMAT",
            Error::Shape(_) => "E_SHAPE",
            Error::Config(_) => "E_CONFIG",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::Data(_) => "E_DATA",
            Error::Divergence(_) => "E_DIVERGED",
            Error::Leakage { .. } => "E_LEAKAGE",
            Error::Io { .. } => "E_IO",
            Error::Json(_) => "E_JSON",
            Error::Plot(_) => "E_PLOT",
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Divergence(_) => 4,
            _ => 3,
        }
    }
}
