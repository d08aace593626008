use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward called before a train-mode forward")]
    NoForwardCache,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("frame decode: {0}")]
    Frame(String),
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("dataset format: {0}")]
    Format(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("attack phase violation: {0}")]
    Phase(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error("transport closed")]
    TransportClosed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
