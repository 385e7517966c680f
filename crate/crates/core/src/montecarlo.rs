//! Simulation of the reflected state under the worst-case measure.
//!
//! Euler-Maruyama steps with drift `b + σψ` are projected onto `(0, β]`; the
//! part of a step above `β` is the control increment `Δξ`, charged at the cost
//! of the state before projection. Each path draws from its own ChaCha stream
//! selected by `(seed, path index)`, so results do not depend on how paths are
//! scheduled over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ergodic::{stationary_density, StationaryDistribution};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::numerics::interp::Hermite;
use crate::parallel::{self, Execution};
use crate::shooting::FreeBoundarySolution;

/// Resampling attempts before a step is abandoned and the state held.
const MAX_RESAMPLES: usize = 64;

/// Resample rate above which an estimate is flagged.
pub const RESAMPLE_FLAG_RATE: f64 = 0.01;

/// Simulation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: f64,
    /// Number of occupation bins on `[0, β]`.
    pub n_bins: usize,
    /// Points recorded along the first path (0 disables recording).
    pub record_points: usize,
    pub execution: Execution,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1e4,
            burn_in: 100.0,
            n_paths: 8,
            seed: 20240611,
            x0: 1.0,
            n_bins: 400,
            record_points: 0,
            execution: Execution::Parallel,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return bad("dt", format!("dt and horizon must be > 0, got {} and {}", self.dt, self.horizon));
        }
        if self.dt > self.horizon / 1000.0 {
            return bad("dt", format!("must be at most horizon/1000 = {}", self.horizon / 1000.0));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return bad("burn_in", format!("must lie in [0, horizon), got {}", self.burn_in));
        }
        if self.n_paths == 0 {
            return bad("n_paths", "must be at least 1".into());
        }
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return bad("x0", format!("must be finite and > 0, got {}", self.x0));
        }
        if self.n_bins == 0 {
            return bad("n_bins", "must be at least 1".into());
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn burn_steps(&self) -> usize {
        (self.burn_in / self.dt).round() as usize
    }
}

/// Distribution function on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl EmpiricalCdf {
    /// Samples an analytic distribution function on `grid`.
    pub fn from_distribution(dist: &StationaryDistribution, grid: Vec<f64>) -> Self {
        let values = grid.iter().map(|&x| dist.cdf_at(x)).collect();
        Self { grid, values }
    }
}

/// One recorded point of a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPoint {
    pub t: f64,
    pub x: f64,
    pub xi_cum: f64,
}

/// Estimates from a batch of paths.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub ergodic_payoff: f64,
    pub payoff_se: f64,
    pub moment_f: f64,
    pub moment_se: f64,
    pub empirical_cdf: EmpiricalCdf,
    /// Sup-distance to the analytic distribution function, when available.
    pub ks_distance_vs_analytic: Option<f64>,
    /// Time average of `dξ`.
    pub control_rate: f64,
    pub resample_count: u64,
    /// Resamples per step.
    pub resample_rate: f64,
    /// True when the resample rate exceeds [`RESAMPLE_FLAG_RATE`].
    pub resample_flagged: bool,
    /// Jump `(x0 − β)⁺` applied at time 0.
    pub initial_jump: f64,
    pub min_state: f64,
    pub max_state: f64,
    pub path_payoffs: Vec<f64>,
    pub first_path: Vec<PathPoint>,
}

/// Sample mean and its standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Dynamics shared by all paths.
struct Dynamics<'a, K: Fn(f64) -> f64> {
    spec: &'a ProblemSpec,
    theta: f64,
    beta: f64,
    x_lo: f64,
    kernel: K,
}

/// Per-path accumulators.
struct PathTotals {
    profit: f64,
    entropy: f64,
    cost: f64,
    control: f64,
    moment: f64,
    occupation: Vec<u64>,
    resamples: u64,
    min_state: f64,
    max_state: f64,
    record: Vec<PathPoint>,
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn run_path<K: Fn(f64) -> f64>(
    dyn_: &Dynamics<K>,
    cfg: &McConfig,
    index: u64,
    record_points: usize,
    mut on_step: impl FnMut(f64),
) -> PathTotals {
    let spec = dyn_.spec;
    let eps = spec.epsilon;
    let dt = cfg.dt;
    let sqdt = dt.sqrt();
    let n_steps = cfg.n_steps();
    let burn = cfg.burn_steps();
    let bin_width = dyn_.beta / cfg.n_bins as f64;
    let every = n_steps.checked_div(record_points).map_or(usize::MAX, |k| k.max(1));
    let mut rng = path_rng(cfg.seed, index);
    let mut x = cfg.x0.min(dyn_.beta);
    let mut xi_cum = (cfg.x0 - dyn_.beta).max(0.0);
    let mut t = PathTotals {
        profit: 0.0,
        entropy: 0.0,
        cost: 0.0,
        control: 0.0,
        moment: 0.0,
        occupation: vec![0; cfg.n_bins],
        resamples: 0,
        min_state: x,
        max_state: x,
        record: Vec::new(),
    };
    if record_points > 0 {
        t.record.push(PathPoint { t: 0.0, x, xi_cum });
    }
    for step in 0..n_steps {
        let psi = (dyn_.kernel)(x);
        let s = spec.sigma(x);
        if step >= burn {
            t.profit += spec.pi(x, dyn_.theta);
            t.entropy += psi * psi / (2.0 * eps);
            t.moment += spec.f(x);
            let bin = ((x / bin_width) as usize).min(cfg.n_bins - 1);
            t.occupation[bin] += 1;
        }
        let drift = spec.b(x) + s * psi;
        let mut next = f64::NAN;
        for _ in 0..MAX_RESAMPLES {
            let z: f64 = rng.sample(StandardNormal);
            let cand = x + drift * dt + s * sqdt * z;
            if cand > dyn_.x_lo {
                next = cand;
                break;
            }
            t.resamples += 1;
        }
        if next.is_nan() {
            next = x;
        }
        if next > dyn_.beta {
            let d_xi = next - dyn_.beta;
            xi_cum += d_xi;
            if step >= burn {
                t.cost += spec.c(next) * d_xi;
                t.control += d_xi;
            }
            next = dyn_.beta;
        }
        x = next;
        t.min_state = t.min_state.min(x);
        t.max_state = t.max_state.max(x);
        on_step(x);
        if (step + 1) % every == 0 {
            t.record.push(PathPoint {
                t: (step + 1) as f64 * dt,
                x,
                xi_cum,
            });
        }
    }
    t
}

fn kernel_interpolant(fbs: &FreeBoundarySolution) -> Hermite {
    Hermite::monotone(fbs.bvp.grid.clone(), fbs.bvp.phi.clone())
}

/// Simulates the optimally reflected state under the worst-case measure and
/// estimates the ergodic payoff, the `f`-moment and the occupation law.
pub fn simulate_reflected(
    spec: &ProblemSpec,
    fbs: &FreeBoundarySolution,
    cfg: &McConfig,
) -> Result<McEstimate> {
    cfg.validate()?;
    let vx = kernel_interpolant(fbs);
    let eps = spec.epsilon;
    let dynamics = Dynamics {
        spec,
        theta: fbs.theta,
        beta: fbs.beta_star,
        x_lo: fbs.x_lo(),
        kernel: |x: f64| -eps * spec.sigma(x) * vx.eval(x),
    };
    let paths = parallel::map_range(cfg.execution, cfg.n_paths, |i| {
        let rec = if i == 0 { cfg.record_points } else { 0 };
        run_path(&dynamics, cfg, i as u64, rec, |_| {})
    });

    let span = (cfg.n_steps() - cfg.burn_steps()) as f64 * cfg.dt;
    let steps = (cfg.n_steps() - cfg.burn_steps()) as f64;
    let payoffs: Vec<f64> = paths
        .iter()
        .map(|p| (p.profit * cfg.dt + p.entropy * cfg.dt - p.cost) / span)
        .collect();
    let moments: Vec<f64> = paths.iter().map(|p| p.moment / steps).collect();
    let (ergodic_payoff, payoff_se) = mean_and_se(&payoffs);
    let (moment_f, moment_se) = mean_and_se(&moments);

    let mut occupation = vec![0u64; cfg.n_bins];
    for p in &paths {
        for (o, v) in occupation.iter_mut().zip(&p.occupation) {
            *o += v;
        }
    }
    let total: u64 = occupation.iter().sum();
    let bin_width = fbs.beta_star / cfg.n_bins as f64;
    let mut acc = 0u64;
    let mut grid = Vec::with_capacity(cfg.n_bins);
    let mut values = Vec::with_capacity(cfg.n_bins);
    for (i, o) in occupation.iter().enumerate() {
        acc += o;
        grid.push(if i + 1 == cfg.n_bins {
            fbs.beta_star
        } else {
            (i + 1) as f64 * bin_width
        });
        values.push(acc as f64 / total as f64);
    }
    let empirical_cdf = EmpiricalCdf { grid, values };
    let ks = stationary_density(spec, fbs)
        .ok()
        .map(|d| compare_distribution(&empirical_cdf, &d));

    let resample_count: u64 = paths.iter().map(|p| p.resamples).sum();
    let resample_rate = resample_count as f64 / (cfg.n_steps() * cfg.n_paths) as f64;
    let control_rate = paths.iter().map(|p| p.control).sum::<f64>() / (span * cfg.n_paths as f64);
    Ok(McEstimate {
        ergodic_payoff,
        payoff_se,
        moment_f,
        moment_se,
        empirical_cdf,
        ks_distance_vs_analytic: ks,
        control_rate,
        resample_count,
        resample_rate,
        resample_flagged: resample_rate > RESAMPLE_FLAG_RATE,
        initial_jump: (cfg.x0 - fbs.beta_star).max(0.0),
        min_state: paths.iter().map(|p| p.min_state).fold(f64::INFINITY, f64::min),
        max_state: paths.iter().map(|p| p.max_state).fold(f64::NEG_INFINITY, f64::max),
        path_payoffs: payoffs,
        first_path: paths.into_iter().next().map(|p| p.record).unwrap_or_default(),
    })
}

/// States of one path driven by `b + σψ` and reflected at `beta`, using the
/// Gaussian stream of path `index`.
pub fn simulate_path_with_kernel<K: Fn(f64) -> f64>(
    spec: &ProblemSpec,
    theta: f64,
    beta: f64,
    x_lo: f64,
    kernel: K,
    cfg: &McConfig,
    index: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let dynamics = Dynamics {
        spec,
        theta,
        beta,
        x_lo,
        kernel,
    };
    let mut states = Vec::with_capacity(cfg.n_steps() + 1);
    states.push(cfg.x0.min(beta));
    run_path(&dynamics, cfg, index, 0, |x| states.push(x));
    Ok(states)
}

/// Sup over the grid of `|F_emp − F|`.
pub fn compare_distribution(est: &EmpiricalCdf, dist: &StationaryDistribution) -> f64 {
    est.grid
        .iter()
        .zip(&est.values)
        .map(|(&x, &v)| (v - dist.cdf_at(x)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_extraction_model, CaseStudyParams, ScalarField};
    use crate::shooting::compute_beta;

    fn case() -> ProblemSpec {
        build_extraction_model(CaseStudyParams::default()).unwrap()
    }

    fn short() -> McConfig {
        McConfig {
            dt: 1e-3,
            horizon: 20.0,
            burn_in: 2.0,
            n_paths: 3,
            seed: 7,
            x0: 1.0,
            ..McConfig::default()
        }
    }

    #[test]
    fn config_checks() {
        assert!(McConfig::default().validate().is_ok());
        let bad = McConfig {
            dt: 0.1,
            horizon: 10.0,
            ..McConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = McConfig {
            burn_in: 1e5,
            ..McConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let a = simulate_reflected(&s, &fbs, &short()).unwrap();
        let b = simulate_reflected(&s, &fbs, &short()).unwrap();
        assert_eq!(a, b);
        let seq = McConfig {
            execution: Execution::Sequential,
            ..short()
        };
        assert_eq!(a, simulate_reflected(&s, &fbs, &seq).unwrap());
        assert!(a.payoff_se > 0.0 && a.moment_se > 0.0);
        assert!(a.max_state <= fbs.beta_star + 1e-12 && a.min_state > 0.0);
        let v = &a.empirical_cdf.values;
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*v.last().unwrap(), 1.0);
    }

    #[test]
    fn start_above_boundary_jumps() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let cfg = McConfig {
            x0: fbs.beta_star + 1.5,
            record_points: 10,
            ..short()
        };
        let e = simulate_reflected(&s, &fbs, &cfg).unwrap();
        assert!((e.initial_jump - 1.5).abs() < 1e-12);
        assert_eq!(e.first_path[0].x, fbs.beta_star);
        assert!((e.first_path[0].xi_cum - 1.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_diffusion_follows_ode() {
        // σ ≡ 0 and b ≡ −0.1: x(t) = 1 − 0.1t, no reflection, payoff = average profit.
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let mut d = s.clone();
        d.diffusion.sigma = ScalarField::constant(0.0);
        d.diffusion.b = ScalarField::constant(-0.1);
        let cfg = McConfig {
            dt: 1e-3,
            horizon: 5.0,
            burn_in: 1.0,
            n_paths: 1,
            x0: 1.0,
            ..McConfig::default()
        };
        let e = simulate_reflected(&d, &fbs, &cfg).unwrap();
        assert_eq!(e.control_rate, 0.0);
        assert_eq!(e.resample_count, 0);
        // Left-point sum of π(1 − 0.1t) over [1, 5).
        let mut sum = 0.0;
        for k in 1000..5000 {
            let x: f64 = 1.0 - 0.1 * (k as f64 * 1e-3);
            sum += x.powf(0.6) * 2.0;
        }
        let oracle = sum * 1e-3 / 4.0;
        assert!((e.ergodic_payoff - oracle).abs() < 1e-9, "{} vs {oracle}", e.ergodic_payoff);
    }

    #[test]
    fn analytic_cdf_is_at_distance_zero() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let dist = stationary_density(&s, &fbs).unwrap();
        let grid: Vec<f64> = (1..=50).map(|i| i as f64 * fbs.beta_star / 50.0).collect();
        let est = EmpiricalCdf::from_distribution(&dist, grid);
        assert_eq!(compare_distribution(&est, &dist), 0.0);
    }

    #[test]
    fn larger_kernel_dominates_pathwise() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let vx = kernel_interpolant(&fbs);
        let psi = |x: f64| -s.sigma(x) * vx.eval(x);
        let cfg = short();
        let run = |k: &dyn Fn(f64) -> f64| {
            simulate_path_with_kernel(&s, 1.0, fbs.beta_star, fbs.x_lo(), k, &cfg, 0).unwrap()
        };
        let low = run(&psi);
        let high = run(&|x| psi(x) + 0.1);
        assert!(low.iter().zip(&high).all(|(a, b)| a <= b));
    }
}
