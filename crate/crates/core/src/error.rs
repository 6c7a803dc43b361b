use thiserror::Error;

/// Errors surfaced by the core modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("source and destination positions coincide")]
    ZeroDistance,

    #[error("|rho| = {0:.3e} violates the modulation approximation regime (must be < 1e-3)")]
    InvalidRho(f64),

    #[error("normal matrix condition {cond:.3e} exceeds 1e12 with ridge = 0")]
    RankDeficient { cond: f64 },

    #[error("unsupported filter length R = {0}, expected 4 or 8")]
    UnsupportedLength(usize),

    #[error("delay of {delay} samples outside readable range [{min}, {max}]")]
    DelayOutOfRange { delay: f64, min: f64, max: f64 },

    #[error("sample index {index} has left the {capacity}-sample history (newest is {newest})")]
    BufferUnderrun {
        index: i64,
        newest: i64,
        capacity: usize,
    },

    #[error(
        "pair delay {pair_s:.3e} s is shorter than the scatter delay spread {spread_s:.3e} s"
    )]
    CausalityViolation { pair_s: f64, spread_s: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("matched filter template is empty")]
    EmptyTemplate,

    #[error("unsupported fit: {0}")]
    UnsupportedFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
