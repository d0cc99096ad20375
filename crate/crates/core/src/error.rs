use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid channel state (lambda1 = {lambda1}, lambda2 = {lambda2})")]
    InvalidChannel { lambda1: f64, lambda2: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("support of rho is not contained in support of sigma")]
    SupportViolation,

    #[error("zero denominator in correlator {0}")]
    ZeroDenominator(String),

    #[error("click model is identically zero")]
    ZeroModel,

    #[error("events are not time ordered at index {0}")]
    Unordered(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid count matrix: {0}")]
    CountMatrix(String),

    #[error("requested {requested} output bits from {available} input bits")]
    OutputTooLong { requested: usize, available: usize },

    #[error("empty key")]
    EmptyKey,

    #[error("malformed key envelope: {0}")]
    KeyEnvelope(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, value: f64) -> Error {
    Error::Domain { what, value }
}
