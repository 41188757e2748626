use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] arbor_core::Error),

    #[error("empty cluster")]
    EmptyCluster,

    #[error("class {0} has no examples")]
    MissingClass(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}; max |grad| {max_grad}, max |param| {max_param}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
        max_grad: f64,
        max_param: f64,
    },

    #[error("malformed parameter file: {0}")]
    Format(String),
}
