use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, invalid options or out-of-range settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// The structural model itself is malformed (non-SPD mass, asymmetric stiffness, ...).
    #[error("model error: {0}")]
    Model(String),

    /// Modal data that cannot support inference.
    #[error("data error: {0}")]
    Data(String),

    /// A linear solve or factorization failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Argument outside the domain of a formula (e.g. nonpositive precision).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
