use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("value {value} outside the support of the {likelihood} likelihood")]
    Support { likelihood: &'static str, value: f64 },

    #[error("{count} test targets outside the evaluation support (first indices: {indices:?})")]
    SupportViolations { count: usize, indices: Vec<usize> },

    #[error("matrix not positive definite after trying jitter levels {jitters:?}")]
    NotPositiveDefinite { jitters: Vec<f64> },

    #[error("target variance is zero; normalised error is undefined")]
    DegenerateVariance,

    #[error("insufficient data: {available} usable records, at least {required} needed")]
    InsufficientData { available: usize, required: usize },

    #[error("training diverged at iteration {iteration}: ELBO is not finite")]
    Diverged {
        iteration: usize,
        trace: Vec<(usize, f64)>,
    },

    #[error("model state error: {0}")]
    State(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Support { .. } => "support",
            Error::SupportViolations { .. } => "support",
            Error::NotPositiveDefinite { .. } => "numerical",
            Error::DegenerateVariance => "degenerate_variance",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Diverged { .. } => "diverged",
            Error::State(_) => "state",
            Error::Ingestion(_) => "ingestion",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
