use std::io;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable lowercase name of the variant, for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Index { .. } => "index",
            Error::Degenerate(_) => "degenerate",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::Optimization { .. } => "optimization",
            Error::Sample { source, .. } => source.kind(),
            Error::Infeasible(_) => "infeasible",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
