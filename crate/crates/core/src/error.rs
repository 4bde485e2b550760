use std::path::PathBuf;

use thiserror::Error;

use crate::vecmath::VecError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Vector(#[from] VecError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("client {client_id} has an empty {part} set")]
    EmptyDataset {
        client_id: usize,
        part: &'static str,
    },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("cannot sample {requested} clients from a pool of {available}")]
    TooManyClients { requested: usize, available: usize },

    #[error("no updates to aggregate")]
    NoUpdates,

    #[error("{what} out of domain: {reason}")]
    Domain { what: &'static str, reason: String },

    #[error("simplex solver did not settle within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("{path}: bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX payload ({needed} bytes needed, {available} present)")]
    IdxTruncated {
        path: PathBuf,
        needed: usize,
        available: usize,
    },

    #[error("IDX image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigSyntax(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidConfig { .. } | Error::ConfigSyntax(_))
    }
}
