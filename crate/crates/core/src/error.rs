use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An argument violates an operation's precondition.
    InvalidArgument(String),
    /// A guidance/search configuration is inconsistent (for example a
    /// branch-out module paired with the wrong value function).
    InvalidConfiguration(String),
    /// The observed tokens of a masked sequence have zero probability under
    /// the data table.
    OffSupport,
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfiguration(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::InvalidConfiguration(m) => write!(f, "invalid configuration: {m}"),
            Error::OffSupport => f.write_str("off-support observation"),
        }
    }
}

impl core::error::Error for Error {}
