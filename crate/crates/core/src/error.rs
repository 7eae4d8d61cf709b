//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a mathematical precondition (bad simplex, alpha out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A data file could not be parsed or failed validation.
    #[error("ingest error in {path} at row {row}: {msg}")]
    Ingest {
        path: PathBuf,
        /// 1-based row number; 0 when the problem is file-wide.
        row: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("adapter file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
