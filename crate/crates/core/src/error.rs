use std::fmt;

/// Errors produced by this crate.
#[derive(Debug)]
pub enum Error {
    /// Underlying filesystem failure.
    Io(std::io::Error),
    /// A file does not match its declared on-disk layout.
    Format(String),
    /// Matrix or vector shapes are inconsistent.
    Shape(String),
    /// An argument or hyperparameter is out of its valid range.
    Invalid(String),
    /// A numerical step failed (non-finite values, solver breakdown).
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
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
