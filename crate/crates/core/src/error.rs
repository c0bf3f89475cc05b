use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("quadrature did not converge on [{lo}, {hi}]: estimated error {error:e}")]
    Quadrature { lo: f64, hi: f64, error: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("failed to spawn `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
