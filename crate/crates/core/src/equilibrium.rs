//! Fixed point of the consistency map: bracket, bisection, damped iteration
//! and policy iteration.

use std::fmt;

use crate::ergodic::{consistency_eval, stationary_density, ConsistencyEval};
use crate::error::{Error, Result};
use crate::model::{find_landmarks, ProblemSpec};
use crate::numerics::roots::{bisect_predicate, bisect_root, linspace};
use crate::parallel::{self, Execution};
use crate::shooting::{
    assemble_free_boundary, compute_beta, in_b_with, membership_config, solve_bvp, BvpSolution,
    GridConfig,
};

/// Which scheme produced a result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    DampedFixedPoint,
    BisectionOnG,
    PolicyIteration,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::DampedFixedPoint => "damped_fixed_point",
            Method::BisectionOnG => "bisection_on_g",
            Method::PolicyIteration => "policy_iteration",
        })
    }
}

/// How the bracket used by a search was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BracketOrigin {
    /// Robust construction, both end checks passed.
    Robust,
    /// Robust construction widened until the end checks passed.
    Expanded { halvings: usize, doublings: usize },
    /// Supplied by the caller.
    User,
}

/// Interval `[lo, hi]` searched for the fixed point.
#[derive(Clone, Debug)]
pub struct ThetaBracket {
    pub lo: f64,
    pub hi: f64,
    pub origin: BracketOrigin,
    /// Free boundary of the robust problem (`NaN` for user brackets).
    pub robust_beta: f64,
    /// Robust construction before any widening (`NaN` for user brackets).
    pub robust_lo: f64,
    pub robust_hi: f64,
    /// Evaluations of `T` made while checking and widening the bracket.
    pub evaluations: Vec<ConsistencyEval>,
}

/// One iteration of a fixed-point search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub theta: f64,
    pub t_theta: f64,
    pub beta: f64,
    /// `|Tθ − θ|`.
    pub residual: f64,
    /// Width of the current search interval (bisection) or damping in use.
    pub aux: f64,
}

/// Output of every equilibrium method.
#[derive(Clone, Debug)]
pub struct EquilibriumResult {
    pub theta_star: f64,
    pub beta_star: f64,
    pub lambda_star: f64,
    /// `|Tθ* − θ*|`.
    pub residual: f64,
    pub bracket: (f64, f64),
    pub bracket_origin: BracketOrigin,
    pub trace: Vec<TraceRow>,
    pub method: Method,
    /// Control-flow events worth reporting (fallbacks, stalls).
    pub notes: Vec<String>,
    /// Inner steps of policy iteration; empty for the other methods.
    pub pia_steps: Vec<PiaStep>,
}

impl EquilibriumResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Tuning of the equilibrium searches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibriumOptions {
    /// Overrides the computed bracket.
    pub bracket: Option<(f64, f64)>,
    /// Damping of the fixed-point iteration.
    pub rho: f64,
    /// Starting point of the damped iteration; default the lower bracket end.
    pub start: Option<f64>,
    pub max_iter: usize,
    /// Offset of the policy-iteration crossing search; default `1e−4·c_hi`.
    pub tol_pia: Option<f64>,
    /// Crossing steps per inner loop of policy iteration.
    pub pia_inner_max: usize,
    /// Outer steps of policy iteration.
    pub pia_outer_max: usize,
    pub execution: Execution,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            bracket: None,
            rho: 0.5,
            start: None,
            max_iter: 200,
            tol_pia: None,
            pia_inner_max: 50,
            pia_outer_max: 200,
            execution: Execution::Parallel,
        }
    }
}

/// Robust bracket: `θ_lo = F(⟨f, ν̲⟩)` from the problem with `π` replaced by
/// its robust limit, and `θ_hi = F(f(β(θ_lo)))`.
pub fn theta_bracket(spec: &ProblemSpec) -> Result<ThetaBracket> {
    let robust = spec.robust();
    let fbs = compute_beta(&robust, 1.0)?;
    let dist = stationary_density(&robust, &fbs)?;
    let lo = spec.big_f(dist.moment("f", &robust.interaction.f)?);
    let beta_lo = compute_beta(spec, lo)?.beta_star;
    let hi = spec.big_f(spec.f(beta_lo));
    if !(lo.is_finite() && hi.is_finite()) || hi < lo - spec.tol.fp {
        return Err(Error::BracketCollapsed { lo, hi });
    }
    Ok(ThetaBracket {
        lo,
        hi,
        origin: BracketOrigin::Robust,
        robust_beta: fbs.beta_star,
        robust_lo: lo,
        robust_hi: hi,
        evaluations: Vec::new(),
    })
}

const MAX_WIDENINGS: usize = 60;

/// Bracket on which `g(θ) = Tθ − θ` satisfies `g(lo) ≥ −tol` and `g(hi) ≤ tol`.
///
/// Starts from the user bracket when given, else from [`theta_bracket`]. A
/// failing lower end is halved and a failing upper end doubled until the checks
/// pass; user brackets are never widened.
pub fn resolve_bracket(spec: &ProblemSpec, user: Option<(f64, f64)>) -> Result<ThetaBracket> {
    let tol = spec.tol.fp;
    let mut br = match user {
        Some((lo, hi)) => {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "bracket",
                    reason: format!("need 0 < lo < hi, got [{lo}, {hi}]"),
                });
            }
            ThetaBracket {
                lo,
                hi,
                origin: BracketOrigin::User,
                robust_beta: f64::NAN,
                robust_lo: f64::NAN,
                robust_hi: f64::NAN,
                evaluations: Vec::new(),
            }
        }
        None => theta_bracket(spec)?,
    };
    let widen = br.origin != BracketOrigin::User;
    let (mut halvings, mut doublings) = (0, 0);
    loop {
        let e = consistency_eval(spec, br.lo)?;
        let g = e.value - e.theta;
        br.evaluations.push(e);
        if g >= -tol {
            break;
        }
        if !widen || halvings == MAX_WIDENINGS {
            return Err(Error::NoSignChange {
                what: "the fixed-point residual",
                lo: br.lo,
                hi: br.hi,
            });
        }
        br.lo *= 0.5;
        halvings += 1;
    }
    loop {
        let e = consistency_eval(spec, br.hi)?;
        let g = e.value - e.theta;
        br.evaluations.push(e);
        if g <= tol {
            break;
        }
        if !widen || doublings == MAX_WIDENINGS {
            return Err(Error::NoSignChange {
                what: "the fixed-point residual",
                lo: br.lo,
                hi: br.hi,
            });
        }
        br.hi *= 2.0;
        doublings += 1;
    }
    if halvings + doublings > 0 {
        br.origin = BracketOrigin::Expanded {
            halvings,
            doublings,
        };
    }
    Ok(br)
}

/// Evaluates `T` on `n` equally spaced points of `[lo, hi]`.
pub fn scan_consistency(
    spec: &ProblemSpec,
    lo: f64,
    hi: f64,
    n: usize,
    exec: Execution,
) -> Result<Vec<ConsistencyEval>> {
    let thetas = linspace(lo, hi, n);
    parallel::map(exec, &thetas, |&t| consistency_eval(spec, t))
        .into_iter()
        .collect()
}

/// Number of strict sign changes of `g = Tθ − θ` along a scan.
pub fn sign_changes(scan: &[ConsistencyEval]) -> usize {
    let signs: Vec<f64> = scan
        .iter()
        .map(|e| e.value - e.theta)
        .filter(|g| *g != 0.0)
        .map(f64::signum)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn row(iteration: usize, e: &ConsistencyEval, aux: f64) -> TraceRow {
    TraceRow {
        iteration,
        theta: e.theta,
        t_theta: e.value,
        beta: e.beta,
        residual: (e.value - e.theta).abs(),
        aux,
    }
}

/// Bisection on the sign of `g(θ) = Tθ − θ`.
pub fn find_equilibrium_bisection(
    spec: &ProblemSpec,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumResult> {
    let br = resolve_bracket(spec, opts.bracket)?;
    let tol = spec.tol.fp;
    let (mut lo, mut hi) = (br.lo, br.hi);
    let mut trace = Vec::new();
    let mut best: Option<ConsistencyEval> = None;
    for e in &br.evaluations {
        if (e.theta == lo || e.theta == hi)
            && best
                .as_ref()
                .is_none_or(|b| (e.value - e.theta).abs() < (b.value - b.theta).abs())
        {
            best = Some(e.clone());
        }
    }
    for it in 0..opts.max_iter {
        if best
            .as_ref()
            .is_some_and(|b| (b.value - b.theta).abs() <= 0.1 * tol)
            || hi - lo <= 0.1 * tol
        {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let e = consistency_eval(spec, mid)?;
        let g = e.value - e.theta;
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        trace.push(row(it, &e, hi - lo));
        if best
            .as_ref()
            .is_none_or(|b| g.abs() < (b.value - b.theta).abs())
        {
            best = Some(e);
        }
    }
    let best = best.expect("bracket evaluations exist");
    let residual = (best.value - best.theta).abs();
    if residual > tol {
        return Err(Error::MaxIterExceeded {
            limit: opts.max_iter,
            best_theta: best.theta,
            best_residual: residual,
        });
    }
    Ok(EquilibriumResult {
        theta_star: best.theta,
        beta_star: best.beta,
        lambda_star: best.lambda,
        residual,
        bracket: (br.lo, br.hi),
        bracket_origin: br.origin,
        trace,
        method: Method::BisectionOnG,
        notes: Vec::new(),
        pia_steps: Vec::new(),
    })
}

/// Outcome of a damped iteration on an arbitrary map.
#[derive(Clone, Debug)]
pub struct DampedRun {
    pub best: ConsistencyEval,
    pub trace: Vec<TraceRow>,
    pub notes: Vec<String>,
    pub converged: bool,
}

/// `θ ← clamp((1−ρ)θ + ρTθ, lo, hi)`. When `ρ > 0.5` and the residual changes
/// sign twice in a row, the damping drops to 0.5 and the event is noted.
pub fn damped_iteration<M>(
    mut map: M,
    start: f64,
    bracket: (f64, f64),
    rho: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DampedRun>
where
    M: FnMut(f64) -> Result<ConsistencyEval>,
{
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "rho",
            reason: format!("must lie in (0, 1], got {rho}"),
        });
    }
    let mut rho = rho;
    let mut theta = start.clamp(bracket.0, bracket.1);
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    let mut best: Option<ConsistencyEval> = None;
    let mut signs: Vec<f64> = Vec::new();
    for it in 0..max_iter {
        let e = map(theta)?;
        let g = e.value - e.theta;
        trace.push(row(it, &e, rho));
        if best
            .as_ref()
            .is_none_or(|b| g.abs() < (b.value - b.theta).abs())
        {
            best = Some(e.clone());
        }
        if g.abs() <= tol {
            return Ok(DampedRun {
                best: best.expect("set above"),
                trace,
                notes,
                converged: true,
            });
        }
        signs.push(g.signum());
        let n = signs.len();
        if rho > 0.5 && n >= 3 && signs[n - 1] != signs[n - 2] && signs[n - 2] != signs[n - 3] {
            notes.push(format!(
                "oscillating residuals at iteration {it}; damping reduced from {rho} to 0.5"
            ));
            rho = 0.5;
        }
        theta = ((1.0 - rho) * theta + rho * e.value).clamp(bracket.0, bracket.1);
    }
    Ok(DampedRun {
        best: best.expect("at least one iteration"),
        trace,
        notes,
        converged: false,
    })
}

/// Damped fixed-point iteration of the consistency map.
pub fn find_equilibrium_damped(
    spec: &ProblemSpec,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumResult> {
    let br = resolve_bracket(spec, opts.bracket)?;
    let start = opts.start.unwrap_or(br.lo);
    let run = damped_iteration(
        |t| consistency_eval(spec, t),
        start,
        (br.lo, br.hi),
        opts.rho,
        spec.tol.fp,
        opts.max_iter,
    )?;
    let residual = (run.best.value - run.best.theta).abs();
    if !run.converged {
        return Err(Error::MaxIterExceeded {
            limit: opts.max_iter,
            best_theta: run.best.theta,
            best_residual: residual,
        });
    }
    Ok(EquilibriumResult {
        theta_star: run.best.theta,
        beta_star: run.best.beta,
        lambda_star: run.best.lambda,
        residual,
        bracket: (br.lo, br.hi),
        bracket_origin: br.origin,
        trace: run.trace,
        method: Method::DampedFixedPoint,
        notes: run.notes,
        pia_steps: Vec::new(),
    })
}

/// State of policy iteration at one inner step.
#[derive(Clone, Debug)]
pub struct PiaState {
    pub n: usize,
    pub theta: f64,
    pub k: usize,
    pub beta: f64,
    pub phi_current: BvpSolution,
    pub tol_pia: f64,
}

/// What happened to one crossing candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiaAction {
    Accepted,
    /// Candidate failed membership; the boundary was refined by bisection
    /// between the candidate and the current member.
    RejectedAndRefined,
    /// No crossing above the maximizer; refined by bisection from below.
    NoCrossing,
}

/// One inner step of policy iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiaStep {
    pub outer: usize,
    pub inner: usize,
    pub theta: f64,
    pub beta: f64,
    pub candidate: f64,
    pub action: PiaAction,
}

/// Largest `x ∈ (lo, β)` with `φ(x) + c(x) = tol_pia`.
fn largest_crossing(spec: &ProblemSpec, sol: &BvpSolution, lo: f64, tol_pia: f64) -> Option<f64> {
    let h = |i: usize| sol.phi[i] + spec.c(sol.grid[i]) - tol_pia;
    let interp = sol.interpolant();
    let n = sol.grid.len();
    for i in (0..n - 1).rev() {
        if sol.grid[i] <= lo {
            break;
        }
        if h(i) >= 0.0 && h(i + 1) < 0.0 {
            let f = |x: f64| interp.eval(x) + spec.c(x) - tol_pia;
            return Some(bisect_root(f, sol.grid[i], sol.grid[i + 1], 1e-14 * sol.beta));
        }
    }
    None
}

/// Policy iteration: inner boundary improvement from the upper landmark, outer
/// update `θ ← Tθ` when it stays inside the bracket.
pub fn policy_iteration(spec: &ProblemSpec, opts: &EquilibriumOptions) -> Result<EquilibriumResult> {
    let br = resolve_bracket(spec, opts.bracket)?;
    let tol_pia = opts.tol_pia.unwrap_or_else(|| spec.tol_pia());
    let tol_fp = spec.tol.fp;
    let tol_beta = spec.tol.beta;
    let mut theta = opts.start.unwrap_or(br.lo).clamp(br.lo, br.hi);
    let mut trace = Vec::new();
    let mut notes = Vec::new();
    let mut steps = Vec::new();
    let mut prev_beta: Option<f64> = None;
    let mut calm = 0usize;
    let mut last: Option<(ConsistencyEval, f64)> = None;

    for n in 0..opts.pia_outer_max {
        let lm = find_landmarks(spec, theta)?;
        let mcfg = membership_config(spec, theta, &lm)?;
        let member = |b: f64| in_b_with(spec, b, theta, &mcfg).map(|m| m.member);
        let mut state = PiaState {
            n,
            theta,
            k: 0,
            beta: lm.xhat_lower,
            phi_current: solve_bvp(spec, lm.xhat_lower, 0.0, theta, &GridConfig::with_x_lo(lm.xhat))?,
            tol_pia,
        };
        if !member(state.beta)? {
            return Err(Error::InnerStall {
                reason: format!("upper landmark {} is not admissible at theta {theta}", state.beta),
            });
        }
        let width;
        loop {
            if state.k == opts.pia_inner_max {
                notes.push(format!(
                    "outer step {n}: {} crossing steps without rejection; refined by bisection",
                    opts.pia_inner_max
                ));
                let (lo, hi) = bisect_member(&member, lm.xhat, state.beta, tol_beta)?;
                state.beta = hi;
                width = hi - lo;
                break;
            }
            let candidate = largest_crossing(spec, &state.phi_current, lm.xhat, tol_pia);
            let Some(cand) = candidate else {
                let (lo, hi) = bisect_member(&member, lm.xhat, state.beta, tol_beta)?;
                steps.push(PiaStep {
                    outer: n,
                    inner: state.k,
                    theta,
                    beta: hi,
                    candidate: f64::NAN,
                    action: PiaAction::NoCrossing,
                });
                state.beta = hi;
                width = hi - lo;
                break;
            };
            if member(cand)? {
                state.beta = cand;
                state.k += 1;
                state.phi_current =
                    solve_bvp(spec, cand, 0.0, theta, &GridConfig::with_x_lo(lm.xhat))?;
                steps.push(PiaStep {
                    outer: n,
                    inner: state.k,
                    theta,
                    beta: cand,
                    candidate: cand,
                    action: PiaAction::Accepted,
                });
            } else {
                let (lo, hi) = bisect_member(&member, cand, state.beta, tol_beta)?;
                state.beta = hi;
                width = hi - lo;
                steps.push(PiaStep {
                    outer: n,
                    inner: state.k + 1,
                    theta,
                    beta: hi,
                    candidate: cand,
                    action: PiaAction::RejectedAndRefined,
                });
                break;
            }
        }

        let fbs = assemble_free_boundary(spec, theta, state.beta, width, &lm, &GridConfig::default())?;
        let dist = stationary_density(spec, &fbs)?;
        let moment = dist.moment("f", &spec.interaction.f)?;
        let e = ConsistencyEval {
            theta,
            value: spec.big_f(moment),
            moment,
            beta: fbs.beta_star,
            lambda: fbs.lambda,
        };
        trace.push(row(n, &e, state.k as f64));
        let residual = (e.value - theta).abs();
        let d_beta = prev_beta.map_or(f64::INFINITY, |b| (b - e.beta).abs());
        prev_beta = Some(e.beta);
        let next = if e.value >= br.lo && e.value <= br.hi {
            e.value
        } else {
            notes.push(format!(
                "outer step {n}: proposal {} outside the bracket; theta kept",
                e.value
            ));
            theta
        };
        let d_theta = (next - theta).abs();
        if last.as_ref().is_none_or(|(b, _)| residual <= (b.value - b.theta).abs()) {
            last = Some((e.clone(), residual));
        }
        if d_theta <= tol_fp && d_beta <= tol_beta {
            calm += 1;
        } else {
            calm = 0;
        }
        if calm >= 2 || residual == 0.0 {
            return Ok(EquilibriumResult {
                theta_star: e.theta,
                beta_star: e.beta,
                lambda_star: e.lambda,
                residual,
                bracket: (br.lo, br.hi),
                bracket_origin: br.origin,
                trace,
                method: Method::PolicyIteration,
                notes,
                pia_steps: steps,
            });
        }
        theta = next;
    }
    let (best, residual) = last.expect("at least one outer step");
    Err(Error::MaxIterExceeded {
        limit: opts.pia_outer_max,
        best_theta: best.theta,
        best_residual: residual,
    })
}

/// Bisection `(nonmember, member)` between `lo` and the member `hi`.
fn bisect_member<P>(member: &P, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    P: Fn(f64) -> Result<bool>,
{
    let mut failure = None;
    let out = bisect_predicate(
        |b| match member(b) {
            Ok(m) => !m,
            Err(e) => {
                failure.get_or_insert(e);
                false
            }
        },
        lo,
        hi,
        tol,
        200,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(value: impl Fn(f64) -> f64) -> impl FnMut(f64) -> Result<ConsistencyEval> {
        move |t| {
            Ok(ConsistencyEval {
                theta: t,
                value: value(t),
                moment: 0.0,
                beta: 1.0,
                lambda: 0.0,
            })
        }
    }

    #[test]
    fn damped_iteration_converges_on_contraction() {
        let run = damped_iteration(synthetic(|t| 0.5 * t + 1.0), 0.1, (0.0, 5.0), 0.5, 1e-10, 200)
            .unwrap();
        assert!(run.converged);
        assert!((run.best.theta - 2.0).abs() < 1e-9);
    }

    #[test]
    fn start_at_fixed_point_takes_one_step() {
        let run =
            damped_iteration(synthetic(|t| 0.5 * t + 1.0), 2.0, (0.0, 5.0), 0.5, 1e-10, 200).unwrap();
        assert_eq!(run.trace.len(), 1);
    }

    #[test]
    fn oscillation_triggers_fallback() {
        // T(θ) = 2 − θ: undamped iteration alternates between 0.5 and 1.5.
        let run =
            damped_iteration(synthetic(|t| 2.0 - t), 0.5, (0.0, 3.0), 1.0, 1e-10, 50).unwrap();
        assert!(run.converged);
        assert!((run.best.theta - 1.0).abs() < 1e-12);
        assert_eq!(run.notes.len(), 1);
        assert!(run.trace.iter().any(|r| r.aux == 0.5));
    }

    #[test]
    fn invalid_damping_rejected() {
        assert!(damped_iteration(synthetic(|t| t), 1.0, (0.0, 2.0), 0.0, 1e-9, 5).is_err());
        assert!(damped_iteration(synthetic(|t| t), 1.0, (0.0, 2.0), 1.5, 1e-9, 5).is_err());
    }

    #[test]
    fn sign_change_count() {
        let mk = |t: f64, v: f64| ConsistencyEval {
            theta: t,
            value: v,
            moment: 0.0,
            beta: 0.0,
            lambda: 0.0,
        };
        let scan = vec![mk(1.0, 2.0), mk(2.0, 2.5), mk(3.0, 2.0), mk(4.0, 1.0)];
        assert_eq!(sign_changes(&scan), 1);
    }
}
