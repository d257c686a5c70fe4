use thiserror::Error;

/// Errors raised by samplers, simulators and statistics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside the range the operation accepts.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A state or evaluation point is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn check_probability(name: &str, q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        param(format!("{name} = {q} is not a probability in [0, 1]"))
    }
}
