use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "volume {volume} cannot be depleted: beta*gamma*v/alpha = {ratio} must be < 1"
    )]
    InfeasibleVolume { volume: f64, ratio: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("regime index {index} out of range for {len} states")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("solve did not converge: residual {residual:e} exceeds {tolerance:e}")]
    NonConvergence { residual: f64, tolerance: f64 },

    #[error(
        "grid too small: {:.4}% of the weighted payoff mass lies in the outer 5% of the grid (regime {regime})",
        fraction * 100.0
    )]
    GridTooSmall { fraction: f64, regime: usize },

    #[error("lattice step {dt:e} violates the stability limit {limit:e}")]
    Unstable { dt: f64, limit: f64 },

    #[error("no exercise dates")]
    EmptySchedule,
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
