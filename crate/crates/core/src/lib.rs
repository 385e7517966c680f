//! Stationary mean-field equilibria of ergodic singular-control games under
//! model ambiguity.
//!
//! The pipeline for a mean-field parameter `θ`:
//! landmarks of `ℓ(·, θ)` ([`model`]) → free boundary by Riccati shooting
//! ([`shooting`]) → stationary law of the reflected worst-case diffusion
//! ([`ergodic`]) → consistency map `Tθ` and its fixed point ([`equilibrium`]).
//! [`montecarlo`] checks the analytic pipeline by simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod ergodic;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod numerics;
pub mod parallel;
pub mod shooting;

pub use error::{Error, Result};
