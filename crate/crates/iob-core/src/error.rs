use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("secret sharing error: {0}")]
    Sharing(String),

    #[error("access control error: {0}")]
    Access(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("simulation error: {0}")]
    Sim(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
