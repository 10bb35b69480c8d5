use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("integration overflow: {0}")]
    IntegrationOverflow(String),

    #[error("system is not incrementally stable: estimated kappa = {0}")]
    NotIncrementallyStable(f64),

    #[error("precision condition violated: {0}")]
    PrecisionViolated(String),

    #[error("empty specification: {0}")]
    EmptySpec(String),

    #[error("cell {cell:?} is outside the domain")]
    OutOfDomain { cell: Vec<i64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
