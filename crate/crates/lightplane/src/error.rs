//! Error type for the IO/driver layer, wrapping kernel errors.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    Io(std::io::Error),
    /// Malformed file contents (bad magic, truncation, invalid JSON, ...).
    Parse(String),
    Kernel(lightplane_core::Error),
    /// Optimization produced a non-finite loss.
    Diverged { iteration: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Kernel(e) => write!(f, "{e}"),
            Error::Diverged { iteration } => {
                write!(f, "optimization diverged (non-finite loss) at iteration {iteration}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Kernel(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<lightplane_core::Error> for Error {
    fn from(e: lightplane_core::Error) -> Self {
        Error::Kernel(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// CLI exit code: 2 for unreadable/invalid input, 3 for shape and
    /// cross-call contract mismatches, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse(_) => 2,
            Error::Kernel(lightplane_core::Error::DimMismatch { .. })
            | Error::Kernel(lightplane_core::Error::Contract { .. }) => 3,
            Error::Kernel(lightplane_core::Error::Domain { .. }) => 2,
            Error::Diverged { .. } => 1,
        }
    }
}
