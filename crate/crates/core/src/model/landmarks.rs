//! Critical points of the landmark function.

use super::ProblemSpec;
use crate::error::{Error, Result};
use crate::numerics::roots::{bisect_root, first_downcrossing, geomspace};

/// Characteristic points of `x ↦ ℓ(x, θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllLandmarks {
    /// Unique maximizer of ℓ.
    pub xhat: f64,
    /// First point to the right of `xhat` where ℓ returns to its value at 0.
    pub xhat_lower: f64,
    /// Limit of ℓ at 0.
    pub ell_at_zero: f64,
    /// Domain floor used for the limit.
    pub x_min: f64,
    /// |ℓ(x_min) − ℓ(x_min/2)|, the raw halving check.
    pub halving_gap: f64,
}

/// Landmark function at `(x, θ)`.
pub fn eval_ell(spec: &ProblemSpec, x: f64, theta: f64) -> f64 {
    spec.ell(x, theta)
}

/// Landmark function with the profit replaced by its robust limit.
pub fn eval_ell_robust(spec: &ProblemSpec, x: f64) -> f64 {
    spec.ell_robust(x)
}

/// Locates the maximizer of ℓ(·, θ) and the return point of ℓ to ℓ(0, θ).
pub fn find_landmarks(spec: &ProblemSpec, theta: f64) -> Result<EllLandmarks> {
    landmarks_of(spec, |x| spec.ell(x, theta), |x| spec.ell_x(x, theta))
}

/// As [`find_landmarks`] for the robust landmark function.
pub fn find_robust_landmarks(spec: &ProblemSpec) -> Result<EllLandmarks> {
    landmarks_of(spec, |x| spec.ell_robust(x), |x| spec.ell_robust_x(x))
}

/// Limit at 0 from three halvings, extrapolated with the observed convergence order.
fn limit_at_zero<F: Fn(f64) -> f64>(ell: &F, x_min: f64) -> (f64, f64) {
    let l0 = ell(x_min);
    let l1 = ell(0.5 * x_min);
    let l2 = ell(0.25 * x_min);
    let d1 = l0 - l1;
    let d2 = l1 - l2;
    let halving_gap = d1.abs();
    if d2 == 0.0 || d1 == 0.0 {
        return (l2, halving_gap);
    }
    let ratio = d1 / d2;
    if ratio.is_finite() && ratio > 1.0 + 1e-6 {
        (l2 - d2 / (ratio - 1.0), halving_gap)
    } else {
        (l2, halving_gap)
    }
}

fn landmarks_of<F, G>(spec: &ProblemSpec, ell: F, ell_x: G) -> Result<EllLandmarks>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let tol = spec.tol.root;
    let lo = 1e-6 * spec.scale;
    let hi = spec.tol.x_max_search_rel * spec.scale;
    let grid = geomspace(lo, hi, 600);
    let (a, b) = first_downcrossing(&ell_x, &grid).ok_or(Error::NoSignChange {
        what: "the landmark derivative",
        lo,
        hi,
    })?;
    let xhat = bisect_root(&ell_x, a, b, tol);
    let x_min = spec.tol.x_min_rel * xhat;
    let (ell0, halving_gap) = limit_at_zero(&ell, x_min);

    let excess = |x: f64| ell(x) - ell0;
    let mut left = xhat;
    let mut step = 0.05 * xhat.max(spec.scale);
    loop {
        let right = xhat + step;
        if right > hi {
            return Err(Error::UnboundedSearch {
                what: "return of the landmark function to its value at 0",
                limit: hi,
            });
        }
        if excess(right) < 0.0 {
            let xhat_lower = bisect_root(excess, left, right, tol);
            return Ok(EllLandmarks {
                xhat,
                xhat_lower,
                ell_at_zero: ell0,
                x_min,
                halving_gap,
            });
        }
        left = right;
        step *= 2.0;
    }
}
