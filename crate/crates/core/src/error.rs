use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("derived probability `{name}` = {value} lies outside [0, 1]")]
    ProbabilityOverflow { name: &'static str, value: f64 },

    #[error("nuclear data inconsistent: {0}")]
    NuclearData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("matrix not positive definite after jitter {jitter:e}: {context}")]
    NotPositiveDefinite { jitter: f64, context: String },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("duplicate input at row {index}")]
    DuplicateInput { index: usize },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("no feasible point found; smallest constraint violation {violation:e}")]
    Infeasible { violation: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
