use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced while building or running the prescreening chain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value or structure violated one of its documented invariants.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// Malformed input while parsing a sweep, truth table, or other file.
    #[error("parse error at {location}: {why}")]
    Parse { location: String, why: String },

    /// Two objects that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An operation was invoked before its prerequisite was supplied.
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl fmt::Display) -> Self {
        Error::Invalid {
            what,
            why: why.to_string(),
        }
    }

    pub(crate) fn parse(location: impl fmt::Display, why: impl fmt::Display) -> Self {
        Error::Parse {
            location: location.to_string(),
            why: why.to_string(),
        }
    }

    pub(crate) fn dims(why: impl fmt::Display) -> Self {
        Error::DimensionMismatch(why.to_string())
    }
}
