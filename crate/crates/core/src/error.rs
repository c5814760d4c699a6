use thiserror::Error;

/// Errors raised by simulators, evaluators and statistical engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure on path {path} at grid node {node}: {detail}")]
    NumericFailure {
        path: u64,
        node: usize,
        detail: String,
    },

    #[error("missing auxiliary variable `{0}`")]
    MissingAux(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Early return with an `InvalidArgument` error unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::InvalidArgument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
