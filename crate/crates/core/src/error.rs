use std::path::PathBuf;

use thiserror::Error;

use crate::dcc::DccFit;
use crate::garch::GarchFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at row {row}: {message}")]
    Format { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("stationarity error: {0}")]
    Stationarity(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("garch fit did not converge after {} iterations", .0.iterations)]
    GarchNotConverged(Box<GarchFit>),

    #[error("dcc fit did not converge: {}", .0.warning.as_deref().unwrap_or("iteration limit reached"))]
    DccNotConverged(Box<DccFit>),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    NotConverged,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::GarchNotConverged(_) | Error::DccNotConverged(_) | Error::Optimizer(_) => {
                ErrorKind::NotConverged
            }
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
