//! Error type shared by all separation components.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BssError {
    #[error("signal too short: {got} samples, need at least {need}")]
    SignalTooShort { got: usize, need: usize },

    #[error("inconsistent frame geometry: {0}")]
    BadGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible SINR: required interferer variance {sigma_i2} is not positive")]
    InfeasibleSinr { sigma_i2: f64 },

    #[error("update singular matrix at frequency {freq}, channel {channel}")]
    SingularUpdate { freq: usize, channel: usize },

    #[error("degenerate NMF state: {0}")]
    DegenerateNmf(String),

    #[error("nonpositive variance: {0}")]
    NonpositiveVariance(String),

    #[error("zero-energy reference signal at index {0}")]
    ZeroEnergyReference(usize),

    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, BssError>;
