//! Error type shared by all solver stages.

use thiserror::Error;

use crate::shooting::BvpSolution;

/// Direction in which a shooting trajectory left the admissible range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EscapeDirection {
    Up,
    Down,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("configuration error on line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("no sign change of {what} on [{lo}, {hi}]")]
    NoSignChange {
        what: &'static str,
        lo: f64,
        hi: f64,
    },

    #[error("{what} not found before x = {limit}")]
    UnboundedSearch { what: &'static str, limit: f64 },

    #[error("quadrature did not converge: estimate {estimate}, error {error}, tolerance {tolerance}")]
    Quadrature {
        estimate: f64,
        error: f64,
        tolerance: f64,
    },

    #[error("Riccati solution escaped {direction:?} at x = {x} (|phi| > {threshold})")]
    BlowUp {
        x: f64,
        direction: EscapeDirection,
        threshold: f64,
        partial: Box<BvpSolution>,
    },

    #[error("step size {h} fell below the floor at x = {x}")]
    StepUnderflow { x: f64, h: f64 },

    #[error("Cole-Hopf variable changed sign at x = {x}")]
    SignLoss { x: f64, partial: Box<BvpSolution> },

    #[error("upper landmark {beta} is not in the admissible set (gap {gap} at x = {x})")]
    BracketInvalid { beta: f64, gap: f64, x: f64 },

    #[error("stationary density normalization did not stabilize: {reason}")]
    NormalizationDiverged { reason: String },

    #[error("equilibrium bracket collapsed: theta_hi = {hi} < theta_lo = {lo}")]
    BracketCollapsed { lo: f64, hi: f64 },

    #[error("iteration limit {limit} reached; best theta {best_theta} with residual {best_residual}")]
    MaxIterExceeded {
        limit: usize,
        best_theta: f64,
        best_residual: f64,
    },

    #[error("policy iteration stalled: {reason}")]
    InnerStall { reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<crate::numerics::quad::QuadFailure> for Error {
    fn from(q: crate::numerics::quad::QuadFailure) -> Self {
        Error::Quadrature {
            estimate: q.estimate,
            error: q.error,
            tolerance: q.tolerance,
        }
    }
}
