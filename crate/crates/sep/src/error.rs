use thiserror::Error;

/// Errors raised while assembling or running a pipeline.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("pipe index out of range: {0}")]
    BadPipe(String),
    #[error("pipe already connected: {0}")]
    AlreadyConnected(String),
    #[error("connection would create a cycle")]
    Cycle,
    #[error("incompatible pipe types: {0}")]
    TypeMismatch(String),
    #[error("mixed soft and hard pulls on the same pipe")]
    MixedPullModes,
    #[error("type error: {0}")]
    EventType(String),
    #[error("{0}")]
    Runtime(String),
}

/// A parse failure, reporting the furthest input position reached.
#[derive(Debug, Error)]
#[error("parse error at position {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum SepError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl SepError {
    /// Process exit code for the CLI: 1 parse, 2 runtime, 3 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            SepError::Parse(_) => 1,
            SepError::Engine(_) => 2,
            SepError::Io(_) => 3,
        }
    }
}
