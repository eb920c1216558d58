use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Inconsistent dimensions or invalid model configuration.
    Config(String),
    /// A parameter is outside its mathematical domain.
    Domain(String),
    /// A linear-algebra operation failed beyond repair (singular matrix,
    /// indefinite covariance after jitter escalation, ...).
    Numerical(String),
    /// I/O failure while reading configs or writing results.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Config(format!("csv error: {other:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
