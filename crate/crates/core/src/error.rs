use thiserror::Error;

/// Errors surfaced by the estimation and calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains NaN or infinite entries")]
    NonFiniteInput,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("design is numerically singular (condition threshold exceeded)")]
    SingularDesign,

    #[error("too few retained rows: {retained} rows for {params} parameters")]
    InsufficientData { retained: usize, params: usize },

    #[error("retained observation has leverage one (M diagonal ~ 0)")]
    LeverageOne,

    #[error("Hadamard square of the annihilator is numerically singular")]
    HadamardSingular,

    #[error("operation requires a dense annihilator; projection is implicit")]
    ImplicitModeUnsupported,

    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),

    #[error("invalid tuning pair: {0}")]
    InvalidTuning(String),

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
