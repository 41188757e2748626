use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("zero valid rows in {path} ({rejected} rows rejected)")]
    NoValidRows { path: PathBuf, rejected: usize },

    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty cluster")]
    EmptyCluster,

    #[error("cluster {0} is referenced but has no rating")]
    UnratedCluster(u32),

    #[error("no supervised points (every label is Gray)")]
    NoSupervisedPoints,

    #[error("infeasible tree placement: placed {placed} of {requested} trees with spacing {spacing} m")]
    InfeasiblePlacement {
        placed: usize,
        requested: usize,
        spacing: f64,
    },

    #[error("backend job failed: {0}")]
    Backend(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

/// Attach a path to a bare `std::io::Error`.
pub trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
