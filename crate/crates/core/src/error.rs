use thiserror::Error;

/// Errors raised by the estimation engine.
///
/// Every variant is cheap to clone so that lazily fitted models can cache
/// their failure and report it to each estimator that asks for them.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("no eligible units: estimation impossible")]
    NoEligibleUnits,

    #[error("empty treatment cell: {0}")]
    EmptyCell(String),

    #[error("positivity violation in cells: {}", .0.join(", "))]
    Positivity(Vec<String>),

    #[error("missing counterfactual outcomes for versions: {}", .0.join(", "))]
    MissingCounterfactual(Vec<String>),

    #[error("degenerate outcome: {0}")]
    DegenerateOutcome(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient follow-up: no measurement after day 10")]
    InsufficientFollowUp,

    #[error("load errors:\n  {}", .0.join("\n  "))]
    Load(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Validation {
            field: format!("json (line {}, column {})", e.line(), e.column()),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
