use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with arguments outside its domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A scenario file lacks a required column.
    #[error("missing required column '{column}'")]
    MissingColumn { column: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown site id '{0}'")]
    UnknownSite(String),

    /// Internal consistency between arguments was broken (e.g. a trajectory
    /// that does not belong to the scenario it is replayed against).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("no ground-truth selection available; skip supervised pretraining")]
    NoGroundTruth,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
