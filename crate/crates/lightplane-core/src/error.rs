//! Error type shared by the kernel crate.

use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A buffer or parameter dimension does not match its contract.
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A value is outside the mathematical domain of an operation
    /// (non-finite point, non-unit direction, invalid configuration).
    Domain { what: &'static str },
    /// A cross-call contract was violated (e.g. backward invoked with a
    /// transmittance cache that does not belong to the forward pass).
    Contract { what: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch {
                what,
                expected,
                got,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, got {got}"),
            Error::Domain { what } => write!(f, "domain error: {what}"),
            Error::Contract { what } => write!(f, "contract violation: {what}"),
        }
    }
}

impl core::error::Error for Error {}
