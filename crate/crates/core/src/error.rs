use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the aggregation pipeline.
#[derive(Debug, Error)]
pub enum GfaError {
    #[error("node index {index} out of range for {nodes} nodes")]
    Index { index: usize, nodes: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GfaError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        GfaError::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GfaError::Domain(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        GfaError::Parse {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GfaError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = GfaError> = std::result::Result<T, E>;
