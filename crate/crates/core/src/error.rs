use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by parsing, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data; `line` is 1-based and counts the header.
    /// Line 0 means no line applies (e.g. a file that cannot be opened).
    #[error("{}{message}", if *line == 0 { String::new() } else { format!("line {line}: ") })]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{what} index {index} out of bounds (size {size})")]
    IndexOutOfBounds {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0}")]
    EmptyInput(String),

    /// A non-finite value surfaced during optimization. Carries the loss
    /// trace recorded up to the failure so the run can be diagnosed.
    #[error("non-finite value during {context} (trace length {})", trace.len())]
    NonFinite { context: String, trace: Vec<f64> },

    #[error("unknown {what} {id}")]
    UnknownId { what: &'static str, id: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn parse(line: impl TryInto<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            line: line.try_into().unwrap_or(0),
            message: message.into(),
        }
    }
}
