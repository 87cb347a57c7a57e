use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A point or argument lies outside the domain where the object is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed, empty, or shape-inconsistent arguments.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A model state violates one of its invariants.
    #[error("invalid state: {0}")]
    State(String),
    /// A factorization failed even after jitter.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
