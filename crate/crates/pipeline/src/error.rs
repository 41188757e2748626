use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] arbor_core::Error),

    #[error(transparent)]
    Rater(#[from] arbor_rater::Error),

    #[error("no human ratings in {0}; run serve and rate clusters first")]
    MissingRatings(PathBuf),

    #[error("the human ratings contain no {0} cluster; rate more clusters or pass a pretrained rater")]
    MissingRatedClass(&'static str),

    #[error("run directory {path} is locked by process {pid}")]
    Locked { path: PathBuf, pid: u32 },

    #[error("inconsistent run state: {0}")]
    Inconsistent(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Core(arbor_core::Error::io("<unknown>", e))
    }
}
