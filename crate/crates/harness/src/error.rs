use cfisac_metarl::MetaRlError;

/// Everything the CLI can fail with, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad flags, unreadable or invalid configuration, incompatible inputs.
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}

impl From<cfisac_core::Error> for HarnessError {
    fn from(e: cfisac_core::Error) -> Self {
        match e {
            cfisac_core::Error::Config(_) | cfisac_core::Error::Parse(_) => HarnessError::Config(e.to_string()),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

impl From<MetaRlError> for HarnessError {
    fn from(e: MetaRlError) -> Self {
        match e {
            MetaRlError::Config(_) => HarnessError::Config(e.to_string()),
            MetaRlError::Core(inner) => inner.into(),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(format!("I/O: {e}"))
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Runtime(format!("CSV: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
