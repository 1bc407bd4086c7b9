//! Application errors and their process exit codes.

use thiserror::Error;

use crate::config::ConfigError;
use crate::reference::ReferenceError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerical(#[from] fgash_core::Error),
    #[error("reference solver: {0}")]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self::Config(ConfigError::Invalid(message.into()))
    }

    /// 2 for bad input, 3 for a numerical abort, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use fgash_core::Error as E;
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Numerical(E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::GridMismatch) => EXIT_CONFIG,
            Self::Numerical(_) => EXIT_NUMERICAL,
            Self::Reference(ReferenceError::Aliasing { .. }) => EXIT_NUMERICAL,
            Self::Reference(_) => EXIT_CONFIG,
            Self::Other(_) => EXIT_FAILURE,
        }
    }
}
