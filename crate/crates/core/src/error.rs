use thiserror::Error;

use crate::hybrid::HybridState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A hysteresis design inequality does not hold for the supplied constants.
    #[error("hysteresis design violated: {inequality} (got {detail})")]
    Hysteresis {
        inequality: &'static str,
        detail: String,
    },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("non-finite derivative near t = {t}")]
    NumericBlowup { t: f64, state: Box<HybridState> },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Fails with [`Error::InvalidParameter`] unless `value` is finite and strictly positive.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {value}")))
    }
}
