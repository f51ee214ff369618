use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the signal model, the solvers and the scenario loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    /// A value falls outside the range covered by an MMSE table, or a water
    /// level implies an snr beyond the modeled range.
    #[error("out of range: {0}")]
    Range(String),

    /// An iterative or quadrature routine failed to meet its tolerance. Both
    /// of the last two estimates are kept for diagnosis.
    #[error("accuracy: {what} not converged (estimates {first:e} and {second:e})")]
    Accuracy { what: String, first: f64, second: f64 },

    #[error("table build failed: {0}")]
    TableBuild(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input (config, constellation, arguments).
    Config,
    /// Numerical failures: range, accuracy, table construction.
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Range(_) | Error::Accuracy { .. } | Error::TableBuild(_) => ErrorClass::Numeric,
            _ => ErrorClass::Config,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), message: message.into() }
    }
}
