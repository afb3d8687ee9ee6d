//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by simulation, evaluation, and fitting.
#[derive(Error, Debug)]
pub enum Error {
    /// A point fell outside the domain of a raster or covariate field.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid argument or malformed input file.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Optimisation did not converge within the configured restarts.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// Numerical failure (e.g. a covariance that is not positive definite).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command-line interface.
    ///
    /// 2 = bad input, 3 = non-convergence, 4 = domain (point off raster),
    /// 5 = other numerical/I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            Error::NonConvergence(_) => 3,
            Error::Domain(_) => 4,
            Error::Numerical(_) | Error::Io(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
