use chrono::NaiveDateTime;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("empty series: {0}")]
    EmptySeries(&'static str),

    #[error("insufficient data for {what}: need {needed}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("alignment error: {message} (offending timestamps: {timestamps:?})")]
    Alignment {
        message: String,
        timestamps: Vec<NaiveDateTime>,
    },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("insufficient overlap: {n} common observations, need at least {min}")]
    InsufficientOverlap { n: usize, min: usize },

    #[error("no candidate threshold produced a trade on the training segment")]
    NoSignal,

    #[error("{d} features exceed the exact enumeration limit of {max}; use shapley_sampled")]
    TooManyFeatures { d: usize, max: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed for {key}: {source}")]
    Stage {
        stage: &'static str,
        key: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str, key: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            key: key.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by the input data rather than configuration or internals.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Ingest { .. }
                | Error::EmptySeries(_)
                | Error::InsufficientData { .. }
                | Error::Alignment { .. }
                | Error::Csv(_)
                | Error::Io(_)
        )
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self.root(), Error::Config(_) | Error::Parameter(_))
    }
}
