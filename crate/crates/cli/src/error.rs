use thiserror::Error;

use ddrm::DdrmError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] DdrmError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Verify(String),
}

impl CliError {
    /// Short token for the one-line failure report.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(DdrmError::Bridge(_)) => "bridge",
            CliError::Core(DdrmError::Image(_)) => "image",
            CliError::Core(DdrmError::Io(_)) | CliError::Io(_) => "io",
            CliError::Core(DdrmError::Numerical(_)) => "numerical",
            CliError::Core(_) => "invalid",
            CliError::Json(_) => "io",
            CliError::Verify(_) => "verify",
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl From<ddrm::BridgeError> for CliError {
    fn from(e: ddrm::BridgeError) -> Self {
        CliError::Core(e.into())
    }
}
