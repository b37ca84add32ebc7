use thiserror::Error;

/// Errors raised by estimation, inference, and data ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate support: all actions equal {0}")]
    DegenerateSupport(f64),

    #[error("invalid support override: lower bound {lo} must be below upper bound {hi}")]
    InvalidSupport { lo: f64, hi: f64 },

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("model parameter error: {0}")]
    ModelParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("covariate error: {0}")]
    Covariate(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("unsupported game class for this test: {0}")]
    Unsupported(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad arguments, files, or schemas; false for
    /// failures of the data or the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Schema(_)
                | Error::Unsupported(_)
                | Error::InvalidSupport { .. }
                | Error::Covariate(_)
                | Error::ModelParameter(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
