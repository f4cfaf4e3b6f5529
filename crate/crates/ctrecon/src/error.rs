use std::path::PathBuf;

use ctrecon_core::Error as CoreError;
use thiserror::Error;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Unreadable or malformed input files.
pub const EXIT_IO: i32 = 1;
/// Invalid configuration or command line.
pub const EXIT_CONFIG: i32 = 2;
/// A solver or training run failed numerically.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("PNG export failed: {0}")]
    Png(#[from] image::ImageError),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } | Self::Format { .. } | Self::Png(_) | Self::Csv(_) => EXIT_IO,
            Self::Config(_) => EXIT_CONFIG,
            Self::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::SingularTransform { .. }
        | CoreError::Factorization { .. }
        | CoreError::Divergence { .. }
        | CoreError::NonFiniteLoss { .. } => EXIT_NUMERICAL,
        CoreError::Layer { source, .. } => core_exit_code(source),
        CoreError::DimensionMismatch { .. }
        | CoreError::InvalidGeometry(_)
        | CoreError::InvalidParameter(_)
        | CoreError::TooFewPatches { .. } => EXIT_CONFIG,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
