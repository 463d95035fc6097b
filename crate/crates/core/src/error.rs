use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// The explicit Jacobian would exceed the configured memory budget.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
