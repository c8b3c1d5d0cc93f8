//! Error taxonomy shared by the whole engine.

use alloc::string::String;
use core::fmt;

/// Engine-level error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Invalid construction input: inconsistent shapes, bad network config.
    Config(String),
    /// Misuse of a valid object: mismatched channel counts, out-of-range
    /// parameters, non-scalar loss handed to backward.
    Usage(String),
    /// Numerical failure: non-finite values, eigensolver non-convergence.
    Numerical(String),
    /// Malformed checkpoint bytes.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}
macro_rules! numerical_err {
    ($($arg:tt)*) => { $crate::error::Error::Numerical(alloc::format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::Error::Format(alloc::format!($($arg)*)) };
}

pub(crate) use {config_err, format_err, numerical_err, usage_err};
