use std::fmt;
use std::io;

/// Error type shared across the crate.
#[derive(Debug)]
pub enum Error {
    /// A caller violated an operation's precondition (shape mismatch,
    /// out-of-range argument, empty input, ...).
    Contract(String),
    /// A file did not match its declared format (bad magic, bad version,
    /// truncated payload with a readable header).
    Format(String),
    /// Two inputs that must agree did not (image/label counts, report rows).
    Consistency(String),
    /// Plain I/O failure.
    Io(io::Error),
    /// An operation was called out of order (e.g. gradient read before
    /// backward).
    State(String),
    /// Training diverged; carries the epoch index where loss became non-finite.
    Training { epoch: usize, message: String },
    /// A run was asked for with missing or unusable inputs.
    Config(String),
    /// Input degenerate for the requested computation (e.g. constant image
    /// for Otsu).
    Degenerate(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Consistency(m) => write!(f, "consistency error: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Training { epoch, message } => {
                write!(f, "training failed at epoch {epoch}: {message}")
            }
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
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

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
