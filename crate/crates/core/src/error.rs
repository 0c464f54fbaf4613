use thiserror::Error;

pub type Result<T> = std::result::Result<T, TaskGraphError>;

#[derive(Debug, Error)]
pub enum TaskGraphError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A record references a label that is not part of the taxonomy.
    #[error("schema error: unknown key-step label {label:?} in record {record:?}")]
    UnknownLabel { label: String, record: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Every candidate in the unobserved set has zero feasibility.
    #[error("degenerate observation state{}: {message}", position.map(|t| format!(" at position {t}")).unwrap_or_default())]
    DegenerateState {
        position: Option<usize>,
        message: String,
    },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("non-finite loss at epoch {epoch}; offending cells {cells:?}")]
    NonFiniteLoss {
        epoch: usize,
        cells: Vec<(usize, usize)>,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl TaskGraphError {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            TaskGraphError::InvalidInput(_) => "invalid-input",
            TaskGraphError::UnknownLabel { .. } => "schema",
            TaskGraphError::Parse { .. } => "parse",
            TaskGraphError::ContractViolation(_) => "contract-violation",
            TaskGraphError::DegenerateState { .. } => "degenerate-state",
            TaskGraphError::Structural(_) => "structural",
            TaskGraphError::NonFiniteLoss { .. } => "non-finite-loss",
            TaskGraphError::Unsupported(_) => "unsupported",
            TaskGraphError::Capacity(_) => "capacity",
            TaskGraphError::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for TaskGraphError {
    fn from(err: serde_json::Error) -> Self {
        TaskGraphError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
