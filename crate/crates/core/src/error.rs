use thiserror::Error;

use crate::denoiser::bridge::BridgeError;

#[derive(Debug, Error)]
pub enum DdrmError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid operator: {0}")]
    Construction(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("bridge: {0}")]
    Bridge(#[from] BridgeError),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DdrmError> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DdrmError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
