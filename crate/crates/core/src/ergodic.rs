//! Stationary law of the optimally reflected state under the worst-case measure
//! and the mean-field consistency map.
//!
//! With `V(β) = 0` the density on `(0, β]` is
//!
//! ```text
//! m(x) ∝ (2/σ²(x)) · exp(−∫ₓ^β 2b/σ² dy − 2ε V(x))
//! ```
//!
//! It is represented through a cubic Hermite interpolant of `ln m` whose knot
//! slopes come from the closed form of `(ln m)'`, so the density is smooth
//! between grid nodes and can be handed to adaptive quadrature.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::model::{ProblemSpec, ScalarField, Tolerances};
use crate::numerics::interp::{hermite_tail_integrals, Hermite};
use crate::numerics::quad::{integrate, integrate_log};
use crate::shooting::{compute_beta, FreeBoundarySolution};

type CacheKey = (String, [u64; 7]);

fn tolerance_key(t: &Tolerances) -> [u64; 7] {
    [
        t.root.to_bits(),
        t.ode.to_bits(),
        t.beta.to_bits(),
        t.quad.to_bits(),
        t.fp.to_bits(),
        t.x_min_rel.to_bits(),
        t.x_max_search_rel.to_bits(),
    ]
}

/// Normalized stationary density on `[x_lo, β]`.
#[derive(Debug)]
pub struct StationaryDistribution {
    pub theta: f64,
    pub beta: f64,
    /// Strictly increasing nodes ending at `β`.
    pub grid: Vec<f64>,
    /// Normalized density at the nodes.
    pub density: Vec<f64>,
    /// Distribution function at the nodes (0 at `x_lo`, 1 at `β`).
    pub cdf: Vec<f64>,
    /// Mass of the unnormalized density, `ν((x_lo, β])`.
    pub norm_constant: f64,
    /// Estimate of the mass left of `x_lo`, `m(x_lo)·x_lo`.
    pub truncated_mass: f64,
    log_density: Hermite,
    log_norm: f64,
    tol: Tolerances,
    moment_cache: RwLock<HashMap<CacheKey, f64>>,
}

impl Clone for StationaryDistribution {
    fn clone(&self) -> Self {
        let cache = self
            .moment_cache
            .read()
            .map(|c| c.clone())
            .unwrap_or_default();
        Self {
            theta: self.theta,
            beta: self.beta,
            grid: self.grid.clone(),
            density: self.density.clone(),
            cdf: self.cdf.clone(),
            norm_constant: self.norm_constant,
            truncated_mass: self.truncated_mass,
            log_density: self.log_density.clone(),
            log_norm: self.log_norm,
            tol: self.tol,
            moment_cache: RwLock::new(cache),
        }
    }
}

impl StationaryDistribution {
    pub fn x_lo(&self) -> f64 {
        self.grid[0]
    }

    /// Normalized density at `x`; zero outside `[x_lo, β]`.
    pub fn density_at(&self, x: f64) -> f64 {
        if x < self.grid[0] || x > self.beta {
            return 0.0;
        }
        (self.log_density.eval(x) - self.log_norm).exp()
    }

    /// Derivative of the normalized density at `x` inside the support.
    pub fn density_derivative_at(&self, x: f64) -> f64 {
        self.density_at(x) * self.log_density.derivative(x)
    }

    /// Distribution function at `x`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x <= self.grid[0] {
            return 0.0;
        }
        if x >= self.beta {
            return 1.0;
        }
        let i = self.grid.partition_point(|&v| v <= x) - 1;
        let part = integrate(|y| self.density_at(y), self.grid[i], x, 1e-15, 1e-12)
            .unwrap_or_else(|e| e.estimate);
        (self.cdf[i] + part).clamp(0.0, 1.0)
    }

    /// Grid node where the density is largest.
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &d)| if d > a.1 { (i, d) } else { a });
        self.grid[i]
    }

    /// `∫ g dν` over `[x_lo, β]`, without caching.
    pub fn moment_uncached(&self, g: &ScalarField) -> Result<f64> {
        Ok(integrate_log(
            |x| g.eval(x) * self.density_at(x),
            self.grid[0],
            self.beta,
            1e-300,
            self.tol.quad,
        )?)
    }

    /// `∫ g dν`, cached under `tag`. The cache key also carries the tolerances
    /// the distribution was built with.
    pub fn moment(&self, tag: &str, g: &ScalarField) -> Result<f64> {
        let key = (tag.to_string(), tolerance_key(&self.tol));
        if let Some(v) = self.moment_cache.read().ok().and_then(|c| c.get(&key).copied()) {
            return Ok(v);
        }
        let v = self.moment_uncached(g)?;
        if let Ok(mut c) = self.moment_cache.write() {
            c.entry(key).or_insert(v);
        }
        Ok(v)
    }

    /// Number of cached moments.
    pub fn cached_moments(&self) -> usize {
        self.moment_cache.read().map(|c| c.len()).unwrap_or(0)
    }

    /// Largest residual of `d/dx[½σ²m] = (b − εσ²V_x)m` at the midpoints of
    /// the grid cells, relative to the largest density value.
    pub fn stationarity_residual(&self, spec: &ProblemSpec, fbs: &FreeBoundarySolution) -> f64 {
        let vx = fbs.bvp.interpolant();
        let m_max = self.density.iter().copied().fold(0.0, f64::max);
        self.grid
            .windows(2)
            .map(|w| {
                let x = 0.5 * (w[0] + w[1]);
                let m = self.density_at(x);
                let s = spec.sigma(x);
                let sx = spec.diffusion.sigma.deriv(x);
                let lhs = s * sx * m + 0.5 * s * s * self.density_derivative_at(x);
                let rhs = (spec.b(x) - spec.epsilon * s * s * vx.eval(x)) * m;
                (lhs - rhs).abs() / m_max
            })
            .fold(0.0, f64::max)
    }
}

/// Stationary density of the state driven by `b − εσ²V_x` and reflected at `β`.
pub fn stationary_density(
    spec: &ProblemSpec,
    fbs: &FreeBoundarySolution,
) -> Result<StationaryDistribution> {
    let grid = fbs.bvp.grid.clone();
    let n = grid.len();
    let eps = spec.epsilon;

    let drift_ratio: Vec<f64> = grid.iter().map(|&x| 2.0 * spec.b(x) / spec.sigma2(x)).collect();
    let drift_ratio_x: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let s = spec.sigma(x);
            2.0 * spec.diffusion.b.deriv(x) / (s * s)
                - 4.0 * spec.b(x) * spec.diffusion.sigma.deriv(x) / (s * s * s)
        })
        .collect();
    let scale_tail = hermite_tail_integrals(&grid, &drift_ratio, &drift_ratio_x);

    let mut log_m = Vec::with_capacity(n);
    let mut slope = Vec::with_capacity(n);
    for i in 0..n {
        let x = grid[i];
        let s = spec.sigma(x);
        log_m.push((2.0 / (s * s)).ln() - scale_tail[i] - 2.0 * eps * fbs.v[i]);
        slope.push(
            -2.0 * spec.diffusion.sigma.deriv(x) / s + drift_ratio[i] - 2.0 * eps * fbs.bvp.phi[i],
        );
    }
    if log_m.iter().chain(&slope).any(|v| v.is_nan()) {
        return Err(Error::NormalizationDiverged {
            reason: "log-density is not a number on the grid".into(),
        });
    }
    let shift = log_m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_density = Hermite::with_slopes(grid.clone(), log_m.clone(), slope);

    let unnorm = |x: f64| (log_density.eval(x) - shift).exp();
    let mut cum = vec![0.0; n];
    for i in 1..n {
        let part = integrate(unnorm, grid[i - 1], grid[i], 1e-300, 0.01 * spec.tol.quad).map_err(
            |e| Error::NormalizationDiverged {
                reason: format!(
                    "cell [{:.6e}, {:.6e}] did not converge (error {:.3e})",
                    grid[i - 1],
                    grid[i],
                    e.error
                ),
            },
        )?;
        cum[i] = cum[i - 1] + part;
    }
    let total = cum[n - 1];
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NormalizationDiverged {
            reason: format!("mass {total}"),
        });
    }
    let log_norm = shift + total.ln();
    let density: Vec<f64> = log_m.iter().map(|l| (l - log_norm).exp()).collect();
    let cdf: Vec<f64> = cum.iter().map(|c| c / total).collect();
    Ok(StationaryDistribution {
        theta: fbs.theta,
        beta: fbs.beta_star,
        truncated_mass: density[0] * grid[0],
        grid,
        density,
        cdf,
        norm_constant: log_norm.exp(),
        log_density,
        log_norm,
        tol: spec.tol,
        moment_cache: RwLock::new(HashMap::new()),
    })
}

/// Intermediate values of one evaluation of the consistency map.
#[derive(Clone, Debug)]
pub struct ConsistencyEval {
    pub theta: f64,
    /// `Tθ = F(⟨f, ν⟩)`.
    pub value: f64,
    pub moment: f64,
    pub beta: f64,
    pub lambda: f64,
}

/// Evaluates `Tθ` and keeps the intermediate quantities.
pub fn consistency_eval(spec: &ProblemSpec, theta: f64) -> Result<ConsistencyEval> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must be finite and > 0, got {theta}"),
        });
    }
    let fbs = compute_beta(spec, theta)?;
    let dist = stationary_density(spec, &fbs)?;
    let moment = dist.moment("f", &spec.interaction.f)?;
    Ok(ConsistencyEval {
        theta,
        value: spec.big_f(moment),
        moment,
        beta: fbs.beta_star,
        lambda: fbs.lambda,
    })
}

/// The consistency map `θ ↦ F(⟨f, ν^θ⟩)`.
pub fn consistency_map(spec: &ProblemSpec, theta: f64) -> Result<f64> {
    consistency_eval(spec, theta).map(|e| e.value)
}

/// `∫ |m_a − m_b|` over the union of the supports.
pub fn l1_distance(a: &StationaryDistribution, b: &StationaryDistribution) -> f64 {
    let lo = a.x_lo().min(b.x_lo());
    let mid = a.beta.min(b.beta);
    let hi = a.beta.max(b.beta);
    let f = |x: f64| (a.density_at(x) - b.density_at(x)).abs();
    let part = |u: f64, v: f64| integrate_log(f, u, v, 1e-14, 1e-10).unwrap_or_else(|e| e.estimate);
    part(lo, mid) + if hi > mid { part(mid, hi) } else { 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_extraction_model, CaseStudyParams};

    fn case() -> ProblemSpec {
        build_extraction_model(CaseStudyParams::default()).unwrap()
    }

    #[test]
    fn density_normalized_and_vanishing_at_zero() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let d = stationary_density(&s, &fbs).unwrap();
        let mass = integrate_log(|x| d.density_at(x), d.x_lo(), d.beta, 1e-300, 1e-12).unwrap();
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
        assert!(d.density.iter().all(|&v| v >= 0.0));
        assert!(d.density_at(1e-3) < 1e-100);
        assert!(d.density_at(0.02) < d.density_at(0.05));
        assert_eq!(*d.cdf.last().unwrap(), 1.0);
        assert!(d.cdf.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn moments_respect_support_and_cache() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let d = stationary_density(&s, &fbs).unwrap();
        let one = d.moment("one", &ScalarField::constant(1.0)).unwrap();
        assert!((one - 1.0).abs() < 1e-8);
        let mean = d.moment("id", &ScalarField::new(|x| x, |_| 1.0)).unwrap();
        assert!(mean > 0.0 && mean < d.beta);
        let mf = d.moment("f", &s.interaction.f).unwrap();
        assert!(mf > 0.0 && mf < d.beta.powf(0.6));
        assert_eq!(d.cached_moments(), 3);
        assert_eq!(d.moment("f", &s.interaction.f).unwrap(), mf);
    }

    #[test]
    fn density_factors_into_classical_part_and_distortion() {
        // m ∝ (2/σ²) exp(−∫ₓ^β 2b/σ²) · exp(−2εV); for the case study the first
        // factor is x^{−4} exp(−2/x) up to a constant.
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let d = stationary_density(&s, &fbs).unwrap();
        let v = Hermite::with_slopes(fbs.bvp.grid.clone(), fbs.v.clone(), fbs.bvp.phi.clone());
        let oracle = |x: f64| x.powi(-4) * (-2.0 / x).exp() * (-2.0 * s.epsilon * v.eval(x)).exp();
        let r = |x: f64| d.density_at(x) / oracle(x);
        let r0 = r(1.0);
        for x in [0.1, 0.4, 2.0, 0.999 * d.beta] {
            assert!((r(x) / r0 - 1.0).abs() < 1e-7, "{x}: {}", r(x) / r0);
        }
    }

    #[test]
    fn stationarity_identity_holds() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let d = stationary_density(&s, &fbs).unwrap();
        assert!(d.stationarity_residual(&s, &fbs) < 1e-6);
    }

    #[test]
    fn identity_interaction_gives_mean() {
        let mut s = case();
        s.interaction.f = ScalarField::new(|x| x, |_| 1.0);
        s.interaction.big_f = ScalarField::new(|y| y, |_| 1.0);
        let fbs = compute_beta(&s, 1.0).unwrap();
        let d = stationary_density(&s, &fbs).unwrap();
        let mean = d.moment_uncached(&ScalarField::new(|x| x, |_| 1.0)).unwrap();
        assert!((consistency_map(&s, 1.0).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn consistency_below_boundary_image() {
        let s = case();
        for th in [0.5, 2.0] {
            let e = consistency_eval(&s, th).unwrap();
            assert!(e.value > 0.0 && e.value <= s.big_f(s.f(e.beta)));
        }
    }
}
