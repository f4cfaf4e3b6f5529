use thiserror::Error;

/// Errors raised by the reconstruction library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("too few training patches: need at least {needed}, got {found}")]
    TooFewPatches { needed: usize, found: usize },

    #[error("transform {index} is singular or non-finite")]
    SingularTransform { index: usize },

    #[error("factorization failed for class {class} (condition estimate {condition:e})")]
    Factorization { class: usize, condition: f64 },

    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("non-finite loss during training at step {step} (loss {loss})")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("super layer {layer} failed: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, found })
    }
}
