use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("series for channel {0} has no usable samples")]
    EmptySeries(String),

    #[error("degenerate channel {0}: training minimum equals maximum")]
    DegenerateChannel(String),

    #[error("cannot label window: channel {0} is missing")]
    MissingChannel(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite gradient in {param} at index {index}")]
    NonFiniteGradient { param: String, index: usize },

    #[error("state error: {0}")]
    State(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
