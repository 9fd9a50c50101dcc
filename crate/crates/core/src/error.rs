use thiserror::Error;

/// Errors produced while building or evaluating a CF-ISAC problem instance.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular Fisher information at receiver {receiver}")]
    SingularFim { receiver: usize },

    #[error("failed to parse config: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
