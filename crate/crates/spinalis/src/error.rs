use std::fmt;

/// Error type shared by every module in the crate.
#[derive(Debug)]
pub enum Error {
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A file did not match the expected on-disk format.
    Format(String),
    /// An argument or intermediate value violated a documented invariant.
    Validation(String),
    /// The glide augmenter could not fit the tumor anywhere along the path.
    NoPlacement,
    /// A tumor spec cannot be realized in the requested compartment.
    CannotFit(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::NoPlacement => write!(f, "tumor does not fit the CSF anywhere along the path"),
            Error::CannotFit(msg) => write!(f, "cannot fit tumor: {msg}"),
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

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::Validation` with formatting.
macro_rules! validation {
    ($($arg:tt)*) => {
        $crate::error::Error::Validation(format!($($arg)*))
    };
}

pub(crate) use validation;
