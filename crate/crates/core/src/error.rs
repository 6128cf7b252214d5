use thiserror::Error;

/// Errors produced by the spectral laboratory.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("mode index {k} out of range [1, {k_max}]")]
    Index { k: u64, k_max: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("level {kappa} not attainable at t={t}: g spans [{g_min}, {g_max}] over the spectrum")]
    Range { kappa: f64, t: f64, g_min: f64, g_max: f64 },

    #[error("frontier k*={k_star} exceeds model capacity k_max={k_max}")]
    CapacityExhausted { k_star: f64, k_max: u64 },

    #[error("argument error: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, SpecError>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> SpecError {
    SpecError::Parameter { name, reason: reason.into() }
}
