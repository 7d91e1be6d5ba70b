use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The requested step exceeds the stability limit of the explicit fluid update.
    #[error("step rejected: dt = {requested:.6e} exceeds admissible dt = {admissible:.6e}")]
    StepRejected { requested: f64, admissible: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
