use alloc::string::String;

/// Errors produced by the modelling and inference routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain.
    #[error("parameter out of domain: {0}")]
    Domain(String),
    /// Two series (or a series and a matrix) disagree in length.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A day index lies outside the populated range.
    #[error("day {day} out of range (populated through {limit})")]
    OutOfRange { day: usize, limit: usize },
    /// Poisson-process durations never covered the horizon within the truncation.
    #[error("stick durations cover {covered:.3} of horizon {horizon} within truncation {k_max}")]
    TruncationOverflow {
        covered: f64,
        horizon: f64,
        k_max: usize,
    },
    /// Not enough posterior draws for the requested summary.
    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),
    /// The observed series carries no information after trimming.
    #[error("uninformative data: {0}")]
    Uninformative(String),
    /// Every chain failed to move.
    #[error("sampler failure: {0}")]
    SamplerFailure(String),
    /// A configuration value is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
