use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImmapError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("container error: {0}")]
    Container(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImmapError>;
