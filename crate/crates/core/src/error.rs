use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Bad shapes, out-of-range indices or parameters.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical kernel failed or produced non-finite values.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn numerical(iteration: usize, msg: impl Into<String>) -> Self {
        Error::Numerical {
            iteration,
            message: msg.into(),
        }
    }
}
