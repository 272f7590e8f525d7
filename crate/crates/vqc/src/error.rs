use thiserror::Error;

/// Library-wide error type. Exit-code mapping lives in the CLI binary.
#[derive(Debug, Error)]
pub enum VqcError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("artifact format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, VqcError>;
