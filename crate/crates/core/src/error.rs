use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A configuration value is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Inputs violate a structural contract (lengths, rates, alignment).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("frame encode error: {0}")]
    Encode(String),
    /// The channel estimate is too weak to normalize.
    #[error("degenerate channel (dominant tap magnitude {0:e})")]
    DegenerateChannel(f64),
    /// A control command was refused; network state is unchanged.
    #[error("rejected: {0}")]
    Rejected(String),
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
