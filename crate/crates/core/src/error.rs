use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes or extents.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid hyperparameter or layer configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (non-binary masks, out-of-range classes, corrupt files).
    #[error("data error: {0}")]
    Data(String),

    #[error("data error: {path}: {message}")]
    DataFile { path: PathBuf, message: String },

    /// API misuse, e.g. backward on a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss.
    #[error("numerical abort at step {step}: {message}")]
    Numerical { step: u64, message: String },

    #[error("I/O error: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data_file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::DataFile {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 usage, 2 data, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Dimension(_) | Error::Data(_) | Error::DataFile { .. } | Error::Io { .. } => 2,
            Error::Numerical { .. } => 3,
        }
    }
}
