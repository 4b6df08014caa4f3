use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogclError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("relation id {relation} is already >= {base}; quadruples look augmented twice")]
    DoubleAugmentation { relation: usize, base: usize },

    #[error("timestamp {0} has no history to encode")]
    NoHistory(usize),

    #[error("training diverged at epoch {epoch}, timestamp {time}: loss = {loss}")]
    Diverged { epoch: usize, time: usize, loss: f64 },

    #[error("metric sanity violated: {0}")]
    MetricSanity(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, LogclError>;

impl LogclError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LogclError::Io {
            path: path.into(),
            source,
        }
    }
}
