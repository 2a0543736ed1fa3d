use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inadmissible NPI level {value} for {name} (allowed {lower}..={upper})")]
    Inadmissible {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("susceptible fraction {s} exceeds its initial value {s0}")]
    InconsistentInitialCondition { s: f64, s0: f64 },

    #[error("filter breakdown at step {step}: {reason}")]
    FilterBreakdown { step: usize, reason: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = core::result::Result<T, Error>;
