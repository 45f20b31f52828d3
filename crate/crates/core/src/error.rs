use std::path::PathBuf;

/// Errors produced by the imaging pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular geometry: {0}")]
    Singularity(String),

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("cylinder series did not converge by order {order}")]
    SeriesNotConverged { order: usize },

    #[error("factorization failed: {reason} (condition estimate {condition:.3e})")]
    Factorization { reason: String, condition: f64 },

    #[error("layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: String, found: String },

    #[error("measurement kind mismatch: {0}")]
    KindMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("stale precomputed inverse: built for {expected}, given {found}")]
    StaleInverse { expected: String, found: String },

    #[error("scene sampling gave up after {attempts} rejected placements")]
    SamplingExhausted { attempts: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    DataMismatch,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::Json(_) => ErrorCategory::Config,
            Error::Singularity(_)
            | Error::NotConverged { .. }
            | Error::SeriesNotConverged { .. }
            | Error::NonFinite(_)
            | Error::Factorization { .. }
            | Error::SamplingExhausted { .. } => ErrorCategory::Numerical,
            Error::LayoutMismatch { .. }
            | Error::KindMismatch(_)
            | Error::DimensionMismatch { .. }
            | Error::StaleInverse { .. }
            | Error::Format { .. } => ErrorCategory::DataMismatch,
            Error::Sample { source, .. } => source.category(),
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
