use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A format, model, cost table, or run configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A NaN or infinity reached a place that requires finite values.
    #[error("non-finite value at index {index} ({context})")]
    NonFinite { index: usize, context: &'static str },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller broke an operation's precondition (double stash, missing
    /// stash entry, wrong block length).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(values: &[f64], context: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, context }),
        None => Ok(()),
    }
}
