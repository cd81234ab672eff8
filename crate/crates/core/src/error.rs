use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MisdError>;

#[derive(Debug, Error)]
pub enum MisdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Training {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MisdError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        MisdError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MisdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            MisdError::Config { .. } | MisdError::Usage(_) | MisdError::Parameter(_) => 2,
            MisdError::Format { .. } | MisdError::Io { .. } | MisdError::Dimension(_) => 3,
            MisdError::UndefinedMetric(_) | MisdError::Training { .. } | MisdError::Numeric(_) => 4,
        }
    }
}
