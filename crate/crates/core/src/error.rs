use thiserror::Error;

/// Errors raised by the estimation, selection and benchmarking routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("bandwidth grid is empty: n = {n} is too small for this kernel (need n >= {min_n:.3})")]
    EmptyGrid { n: usize, min_n: f64 },

    #[error("moment error: {0}")]
    Moment(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: error estimate {error:e}")]
    Quadrature { lo: f64, hi: f64, error: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown target '{0}'")]
    UnknownTarget(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
