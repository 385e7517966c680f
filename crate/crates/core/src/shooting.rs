//! Riccati shooting for the free boundary.
//!
//! For a candidate boundary `β` the slope `φ_β` of the potential solves
//!
//! ```text
//! ½σ²φ' + bφ − (ε/2)σ²φ² = ℓ(β, θ) − π(x, θ) + γ,   x < β,   φ(β) = −c(β)
//! ```
//!
//! integrated backward from `β`. The admissible set collects the `β` with
//! `φ_β ≥ −c` on `(0, β]`; its infimum is the free boundary.
//!
//! Backward integration toward 0 is exponentially unstable when the drift
//! points into the domain there: perturbations grow like `exp(∫ 2b/σ²)`. Above
//! the free boundary the trajectory is pulled upward onto the blowing-up branch
//! `φ ≈ 2b/(εσ²)`, below it escapes to `−∞` in finite `x`. Escapes are
//! therefore classified by direction. The free-boundary slope is assembled from
//! the backward solution down to the point where the backward amplification
//! reaches [`SPLICE_AMPLIFICATION`], and a stiffly stable forward solution from
//! the domain floor up to that point.

use crate::error::{EscapeDirection, Error, Result};
use crate::model::{find_landmarks, speed_measure, EllLandmarks, ProblemSpec};
use crate::numerics::interp::{hermite_tail_integrals, Hermite};
use crate::numerics::ode::{integrate, Control, Dopri5Options, Outcome};
use crate::numerics::roots::{bisect_predicate, geomspace, linspace};
use crate::numerics::stiff::{self, RiccatiCoefficients, StiffOptions};

/// Backward amplification factor at which the backward and forward pieces are joined.
pub const SPLICE_AMPLIFICATION: f64 = 100.0;

/// Multiple of the a-priori bound beyond which a trajectory counts as escaped.
pub const BLOWUP_FACTOR: f64 = 1e3;

/// Which formulation produced a solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    RiccatiDirect,
    ColeHopf,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::RiccatiDirect => "riccati_direct",
            Method::ColeHopf => "cole_hopf",
        })
    }
}

/// How the values on the grid were obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Assembly {
    /// Pure backward integration from `β`.
    Backward,
    /// Backward above `x_splice`, forward (stiff) below it.
    Spliced {
        x_splice: f64,
        /// |forward − backward| at the splice point.
        mismatch: f64,
        /// Lowest abscissa reached by the backward run before escaping.
        x_backward_end: f64,
    },
}

/// Output grid settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridConfig {
    /// Lower end of the grid; default `max(x_min, 1e−6·β)`.
    pub x_lo: Option<f64>,
    pub n_uniform: usize,
    pub n_geometric: usize,
    /// Escape threshold on |φ|; default `BLOWUP_FACTOR` times the a-priori bound.
    pub blowup_threshold: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_lo: None,
            n_uniform: 2000,
            n_geometric: 400,
            blowup_threshold: None,
        }
    }
}

impl GridConfig {
    pub fn with_x_lo(x_lo: f64) -> Self {
        Self {
            x_lo: Some(x_lo),
            ..Self::default()
        }
    }

    /// Increasing grid on `[x_lo, β]`.
    pub fn nodes(&self, x_lo: f64, beta: f64) -> Vec<f64> {
        let mut v = geomspace(x_lo, beta, self.n_geometric.max(2));
        v.extend(
            linspace(0.0, beta, self.n_uniform.max(2))
                .into_iter()
                .filter(|&x| x > x_lo),
        );
        v.sort_by(f64::total_cmp);
        let mut out: Vec<f64> = Vec::with_capacity(v.len());
        for x in v {
            match out.last() {
                Some(&p) if x - p <= 1e-12 * beta => {}
                _ => out.push(x),
            }
        }
        *out.last_mut().expect("nonempty grid") = beta;
        out
    }
}

/// Solution of the auxiliary problem for one `(β, γ, θ)`.
#[derive(Clone, Debug)]
pub struct BvpSolution {
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
    /// Strictly increasing abscissae ending at `β`.
    pub grid: Vec<f64>,
    pub phi: Vec<f64>,
    /// Derivative from the differential equation itself.
    pub phi_x: Vec<f64>,
    pub method: Method,
    pub assembly: Assembly,
}

impl BvpSolution {
    /// Cubic Hermite interpolant of φ on the grid.
    pub fn interpolant(&self) -> Hermite {
        Hermite::with_slopes(self.grid.clone(), self.phi.clone(), self.phi_x.clone())
    }

    /// Minimum of `φ + c` over the grid and where it occurs.
    pub fn min_gap(&self, spec: &ProblemSpec) -> (f64, f64) {
        self.grid
            .iter()
            .zip(&self.phi)
            .map(|(&x, &p)| (x, p + spec.c(x)))
            .fold((self.beta, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }

    /// Residual of the differential equation at grid point `i`, using `phi_x`.
    pub fn ode_residual(&self, spec: &ProblemSpec, i: usize) -> f64 {
        let x = self.grid[i];
        let p = self.phi[i];
        let s2 = spec.sigma2(x);
        0.5 * s2 * self.phi_x[i] + spec.b(x) * p - 0.5 * spec.epsilon * s2 * p * p
            - (spec.ell(self.beta, self.theta) - spec.pi(x, self.theta) + self.gamma)
    }
}

/// Right-hand side data of the Riccati equation for fixed `(β, γ, θ)`.
#[derive(Clone, Copy)]
struct Riccati<'a> {
    spec: &'a ProblemSpec,
    theta: f64,
    source: f64,
}

impl<'a> Riccati<'a> {
    fn new(spec: &'a ProblemSpec, beta: f64, gamma: f64, theta: f64) -> Self {
        Self {
            spec,
            theta,
            source: spec.ell(beta, theta) + gamma,
        }
    }

    fn s(&self, x: f64) -> f64 {
        self.source - self.spec.pi(x, self.theta)
    }

    fn slope(&self, x: f64, phi: f64) -> f64 {
        let s2 = self.spec.sigma2(x);
        2.0 * (self.s(x) - self.spec.b(x) * phi) / s2 + self.spec.epsilon * phi * phi
    }
}

impl RiccatiCoefficients for Riccati<'_> {
    fn pq(&self, x: f64) -> (f64, f64) {
        let s2 = self.spec.sigma2(x);
        (2.0 * self.s(x) / s2, -2.0 * self.spec.b(x) / s2)
    }
    fn r(&self) -> f64 {
        self.spec.epsilon
    }
}

/// How a backward run ended.
#[derive(Clone, Copy, Debug, PartialEq)]
enum ShotEnd {
    Completed,
    Escaped { x: f64, direction: EscapeDirection },
    GapViolated,
    SignLoss { x: f64 },
    /// Step size hit the floor or the step budget ran out, with `phi` the last
    /// accepted value.
    Underflow { x: f64, h: f64, phi: f64 },
}

struct Shot {
    /// Grid nodes reached, in decreasing order, with φ.
    xs: Vec<f64>,
    phis: Vec<f64>,
    end: ShotEnd,
    min_gap: (f64, f64),
    last_phi: f64,
}

fn ode_options(spec: &ProblemSpec, beta: f64) -> Dopri5Options {
    let mut o = Dopri5Options::with_tol(spec.tol.ode);
    o.h_min = 1e-14 * beta;
    o
}

/// Backward direct run over the decreasing node list `nodes` (starting at β).
fn shoot_direct(
    rc: &Riccati,
    beta: f64,
    nodes_desc: &[f64],
    threshold: f64,
    stop_gap: Option<f64>,
    max_steps: Option<usize>,
) -> Result<Shot> {
    let spec = rc.spec;
    let x_end = *nodes_desc.last().expect("nonempty");
    let c_beta = spec.c(beta);
    let mut shot = Shot {
        xs: vec![beta],
        phis: vec![-c_beta],
        end: ShotEnd::Completed,
        min_gap: (beta, 0.0),
        last_phi: -c_beta,
    };
    let mut next = 1usize;
    let mut opts = ode_options(spec, beta);
    if let Some(n) = max_steps {
        opts.max_steps = n;
    }
    let outcome = integrate(
        |x, y: &[f64; 1]| [rc.slope(x, y[0])],
        beta,
        [-c_beta],
        x_end,
        1e-3 * beta,
        &opts,
        |step| {
            let check = |x: f64, p: f64, shot: &mut Shot| -> bool {
                if !p.is_finite() || p.abs() > threshold {
                    shot.end = ShotEnd::Escaped {
                        x,
                        direction: if p > 0.0 {
                            EscapeDirection::Up
                        } else {
                            EscapeDirection::Down
                        },
                    };
                    return false;
                }
                let g = p + spec.c(x);
                if g < shot.min_gap.1 {
                    shot.min_gap = (x, g);
                }
                if let Some(tol) = stop_gap {
                    if g < -tol {
                        shot.end = ShotEnd::GapViolated;
                        return false;
                    }
                }
                true
            };
            while next < nodes_desc.len() && nodes_desc[next] >= step.x1 {
                let x = nodes_desc[next];
                let p = step.eval(x)[0];
                if !check(x, p, &mut shot) {
                    return Control::Stop;
                }
                shot.xs.push(x);
                shot.phis.push(p);
                next += 1;
            }
            if !check(step.x1, step.y1[0], &mut shot) {
                return Control::Stop;
            }
            shot.last_phi = step.y1[0];
            Control::Continue
        },
    );
    match outcome {
        Outcome::StepUnderflow { x, h } => {
            shot.end = ShotEnd::Underflow {
                x,
                h,
                phi: shot.last_phi,
            };
            Ok(shot)
        }
        Outcome::MaxSteps { x } => {
            shot.end = ShotEnd::Underflow {
                x,
                h: 0.0,
                phi: shot.last_phi,
            };
            Ok(shot)
        }
        _ => Ok(shot),
    }
}

/// Backward Cole-Hopf run: `y'' = −2(b y' + ε S y)/σ²`, `φ = −y'/(εy)`.
fn shoot_cole_hopf(rc: &Riccati, beta: f64, nodes_desc: &[f64], threshold: f64) -> Result<Shot> {
    let spec = rc.spec;
    let eps = spec.epsilon;
    let x_end = *nodes_desc.last().expect("nonempty");
    let c_beta = spec.c(beta);
    let mut shot = Shot {
        xs: vec![beta],
        phis: vec![-c_beta],
        end: ShotEnd::Completed,
        min_gap: (beta, 0.0),
        last_phi: -c_beta,
    };
    let mut next = 1usize;
    let opts = ode_options(spec, beta);
    let outcome = integrate(
        |x, y: &[f64; 2]| {
            let s2 = spec.sigma2(x);
            [y[1], -2.0 * (spec.b(x) * y[1] + eps * rc.s(x) * y[0]) / s2]
        },
        beta,
        [1.0 / c_beta, eps],
        x_end,
        1e-3 * beta,
        &opts,
        |step| {
            let check = |x: f64, y: [f64; 2], shot: &mut Shot| -> Option<f64> {
                if !(y[0] > 0.0) {
                    shot.end = ShotEnd::SignLoss { x };
                    return None;
                }
                let p = -y[1] / (eps * y[0]);
                if !p.is_finite() || p.abs() > threshold {
                    shot.end = ShotEnd::Escaped {
                        x,
                        direction: if p > 0.0 {
                            EscapeDirection::Up
                        } else {
                            EscapeDirection::Down
                        },
                    };
                    return None;
                }
                let g = p + spec.c(x);
                if g < shot.min_gap.1 {
                    shot.min_gap = (x, g);
                }
                Some(p)
            };
            while next < nodes_desc.len() && nodes_desc[next] >= step.x1 {
                let x = nodes_desc[next];
                match check(x, step.eval(x), &mut shot) {
                    Some(p) => {
                        shot.xs.push(x);
                        shot.phis.push(p);
                    }
                    None => return Control::Stop,
                }
                next += 1;
            }
            if check(step.x1, step.y1, &mut shot).is_none() {
                return Control::Stop;
            }
            Control::Continue
        },
    );
    match outcome {
        Outcome::StepUnderflow { x, h } => Err(Error::StepUnderflow { x, h }),
        Outcome::MaxSteps { x } => Err(Error::StepUnderflow { x, h: 0.0 }),
        _ => Ok(shot),
    }
}

fn default_x_lo(spec: &ProblemSpec, beta: f64, theta: f64) -> f64 {
    let x_min = find_landmarks(spec, theta)
        .map(|l| l.x_min)
        .unwrap_or(spec.tol.x_min_rel * beta);
    x_min.max(1e-6 * beta)
}

/// A-priori bound `(|ℓ(β,θ)+γ| + π(β,θ))·m((0, β))` on the free-boundary slope.
pub fn slope_bound(spec: &ProblemSpec, beta: f64, gamma: f64, theta: f64) -> Result<f64> {
    let m = speed_measure(spec, 1e-9 * beta, beta)?;
    Ok(((spec.ell(beta, theta) + gamma).abs() + spec.pi(beta, theta)) * m)
}

fn resolve_threshold(
    spec: &ProblemSpec,
    beta: f64,
    gamma: f64,
    theta: f64,
    cfg: &GridConfig,
) -> Result<f64> {
    match cfg.blowup_threshold {
        Some(t) => Ok(t),
        None => Ok(BLOWUP_FACTOR * slope_bound(spec, beta, gamma, theta)?.max(spec.cost.c_hi)),
    }
}

fn solution_from_shot(
    spec: &ProblemSpec,
    rc: &Riccati,
    beta: f64,
    gamma: f64,
    theta: f64,
    shot: &Shot,
    method: Method,
) -> BvpSolution {
    let grid: Vec<f64> = shot.xs.iter().rev().copied().collect();
    let phi: Vec<f64> = shot.phis.iter().rev().copied().collect();
    let phi_x = grid
        .iter()
        .zip(&phi)
        .map(|(&x, &p)| {
            if x == beta {
                -spec.c_x(beta)
            } else {
                rc.slope(x, p)
            }
        })
        .collect();
    BvpSolution {
        beta,
        gamma,
        theta,
        grid,
        phi,
        phi_x,
        method,
        assembly: Assembly::Backward,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &ProblemSpec,
    rc: &Riccati,
    beta: f64,
    gamma: f64,
    theta: f64,
    shot: Shot,
    method: Method,
    threshold: f64,
) -> Result<BvpSolution> {
    let sol = solution_from_shot(spec, rc, beta, gamma, theta, &shot, method);
    match shot.end {
        ShotEnd::Completed | ShotEnd::GapViolated => Ok(sol),
        ShotEnd::Escaped { x, direction } => Err(Error::BlowUp {
            x,
            direction,
            threshold,
            partial: Box::new(sol),
        }),
        ShotEnd::SignLoss { x } => Err(Error::SignLoss {
            x,
            partial: Box::new(sol),
        }),
        ShotEnd::Underflow { x, h, .. } => Err(Error::StepUnderflow { x, h }),
    }
}

/// Integrates the Riccati equation backward from `β` over the configured grid.
pub fn solve_bvp(
    spec: &ProblemSpec,
    beta: f64,
    gamma: f64,
    theta: f64,
    cfg: &GridConfig,
) -> Result<BvpSolution> {
    let x_lo = cfg.x_lo.unwrap_or_else(|| default_x_lo(spec, beta, theta));
    let threshold = resolve_threshold(spec, beta, gamma, theta, cfg)?;
    let rc = Riccati::new(spec, beta, gamma, theta);
    let nodes: Vec<f64> = cfg.nodes(x_lo, beta).into_iter().rev().collect();
    let shot = shoot_direct(&rc, beta, &nodes, threshold, None, None)?;
    finish(spec, &rc, beta, gamma, theta, shot, Method::RiccatiDirect, threshold)
}

/// Solves the same problem through the linear Cole-Hopf equation.
pub fn solve_bvp_cole_hopf(
    spec: &ProblemSpec,
    beta: f64,
    gamma: f64,
    theta: f64,
    cfg: &GridConfig,
) -> Result<BvpSolution> {
    let x_lo = cfg.x_lo.unwrap_or_else(|| default_x_lo(spec, beta, theta));
    let threshold = resolve_threshold(spec, beta, gamma, theta, cfg)?;
    let rc = Riccati::new(spec, beta, gamma, theta);
    let nodes: Vec<f64> = cfg.nodes(x_lo, beta).into_iter().rev().collect();
    let shot = shoot_cole_hopf(&rc, beta, &nodes, threshold)?;
    finish(spec, &rc, beta, gamma, theta, shot, Method::ColeHopf, threshold)
}

/// Result of a membership test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub member: bool,
    /// Grid point of the smallest `φ + c` seen.
    pub witness_x: f64,
    /// Smallest `φ + c` seen.
    pub gap: f64,
    /// Escape of the trajectory, if any.
    pub escape: Option<(EscapeDirection, f64)>,
}

const MEMBERSHIP_MAX_STEPS: usize = 100_000;

/// Settings shared by the membership tests of one bisection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MembershipConfig {
    pub x_lo: f64,
    pub threshold: f64,
    pub n_nodes: usize,
    /// Step budget of one shot; running out far outside the cost band counts
    /// as an escape.
    pub max_steps: usize,
}

/// Membership test with explicit settings.
pub fn in_b_with(
    spec: &ProblemSpec,
    beta: f64,
    theta: f64,
    cfg: &MembershipConfig,
) -> Result<Membership> {
    let rc = Riccati::new(spec, beta, 0.0, theta);
    let mut nodes = geomspace(cfg.x_lo, beta, cfg.n_nodes.max(2));
    nodes.reverse();
    let tol_gap = spec.tol_gap();
    let shot = shoot_direct(&rc, beta, &nodes, cfg.threshold, Some(tol_gap), Some(cfg.max_steps))?;
    let escape = match shot.end {
        ShotEnd::Escaped { x, direction } => Some((direction, x)),
        // A step-size collapse far outside the cost band is a finite-x
        // Riccati singularity reached before the escape threshold.
        ShotEnd::Underflow { x, phi, .. } if phi.abs() > BLOWUP_FACTOR * spec.cost.c_hi => {
            Some((
                if phi > 0.0 {
                    EscapeDirection::Up
                } else {
                    EscapeDirection::Down
                },
                x,
            ))
        }
        ShotEnd::Underflow { x, h, .. } => return Err(Error::StepUnderflow { x, h }),
        _ => None,
    };
    let member = shot.min_gap.1 >= -tol_gap
        && !matches!(escape, Some((EscapeDirection::Down, _)));
    Ok(Membership {
        member,
        witness_x: shot.min_gap.0,
        gap: shot.min_gap.1,
        escape,
    })
}

/// Decides whether `β` belongs to the admissible set at `θ`.
///
/// An upward escape keeps the verdict of the gap test: by comparison, slopes of
/// boundaries below the free boundary stay below its bounded slope, so only
/// members can exceed the a-priori bound from above.
pub fn in_b(spec: &ProblemSpec, beta: f64, theta: f64) -> Result<Membership> {
    let cfg = MembershipConfig {
        x_lo: default_x_lo(spec, beta, theta),
        threshold: resolve_threshold(spec, beta, 0.0, theta, &GridConfig::default())?,
        n_nodes: 200,
        max_steps: MEMBERSHIP_MAX_STEPS,
    };
    in_b_with(spec, beta, theta, &cfg)
}

/// Free boundary with the derived potential, value and worst-case kernel.
#[derive(Clone, Debug)]
pub struct FreeBoundarySolution {
    pub theta: f64,
    pub beta_star: f64,
    pub lambda: f64,
    /// Slope at the free boundary; `bvp.phi` is `V_x`.
    pub bvp: BvpSolution,
    /// Potential with `V(β) = 0`.
    pub v: Vec<f64>,
    /// Worst-case kernel `−εσV_x`.
    pub psi_star: Vec<f64>,
    /// `(x̂, x̂_lower)`.
    pub bracket: (f64, f64),
    pub landmarks: EllLandmarks,
    /// Width of the final bisection interval.
    pub beta_width: f64,
    /// A-priori bound on |φ| at the free boundary.
    pub slope_bound: f64,
}

impl FreeBoundarySolution {
    pub fn grid(&self) -> &[f64] {
        &self.bvp.grid
    }

    /// `V_x` on the grid.
    pub fn v_x(&self) -> &[f64] {
        &self.bvp.phi
    }

    /// `|V_xx(β−) + c_x(β)|` with the left derivative from the equation.
    pub fn smooth_fit_residual(&self, spec: &ProblemSpec) -> f64 {
        let rc = Riccati::new(spec, self.beta_star, 0.0, self.theta);
        let beta = self.beta_star;
        (rc.slope(beta, -spec.c(beta)) + spec.c_x(beta)).abs()
    }

    /// Lowest grid abscissa.
    pub fn x_lo(&self) -> f64 {
        self.bvp.grid[0]
    }
}

/// Locates the free boundary at `θ` by bisection on membership and assembles
/// the potential.
pub fn compute_beta(spec: &ProblemSpec, theta: f64) -> Result<FreeBoundarySolution> {
    compute_beta_with(spec, theta, &GridConfig::default())
}

/// [`compute_beta`] with an explicit output grid.
pub fn compute_beta_with(
    spec: &ProblemSpec,
    theta: f64,
    grid: &GridConfig,
) -> Result<FreeBoundarySolution> {
    let lm = find_landmarks(spec, theta)?;
    let (lo, hi) = bisect_boundary(spec, theta, &lm)?;
    assemble_free_boundary(spec, theta, hi, hi - lo, &lm, grid)
}

/// Membership settings used for every test during one free-boundary search.
pub fn membership_config(spec: &ProblemSpec, theta: f64, lm: &EllLandmarks) -> Result<MembershipConfig> {
    let x_lo = lm.x_min.max(1e-6 * lm.xhat_lower);
    let bound = slope_bound(spec, lm.xhat_lower, 0.0, theta)?;
    Ok(MembershipConfig {
        x_lo,
        threshold: BLOWUP_FACTOR * bound.max(spec.cost.c_hi),
        n_nodes: 200,
        max_steps: MEMBERSHIP_MAX_STEPS,
    })
}

/// Bisection bracket `(nonmember, member)` of width `≤ tol.beta`.
pub fn bisect_boundary(spec: &ProblemSpec, theta: f64, lm: &EllLandmarks) -> Result<(f64, f64)> {
    let cfg = membership_config(spec, theta, lm)?;
    let top = in_b_with(spec, lm.xhat_lower, theta, &cfg)?;
    if !top.member {
        return Err(Error::BracketInvalid {
            beta: lm.xhat_lower,
            gap: top.gap,
            x: top.witness_x,
        });
    }
    if in_b_with(spec, lm.xhat, theta, &cfg)?.member {
        return Ok((lm.xhat, lm.xhat));
    }
    let mut failure = None;
    let (lo, hi) = bisect_predicate(
        |b| match in_b_with(spec, b, theta, &cfg) {
            Ok(m) => !m.member,
            Err(e) => {
                failure.get_or_insert(e);
                false
            }
        },
        lm.xhat,
        lm.xhat_lower,
        spec.tol.beta,
        200,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok((lo, hi)),
    }
}

/// Slope, potential and kernel at a member boundary `β`.
pub fn assemble_free_boundary(
    spec: &ProblemSpec,
    theta: f64,
    beta: f64,
    beta_width: f64,
    lm: &EllLandmarks,
    grid_cfg: &GridConfig,
) -> Result<FreeBoundarySolution> {
    let x_lo = grid_cfg.x_lo.unwrap_or(lm.x_min.max(1e-6 * beta));
    let bound = slope_bound(spec, beta, 0.0, theta)?;
    let threshold = grid_cfg
        .blowup_threshold
        .unwrap_or(BLOWUP_FACTOR * bound.max(spec.cost.c_hi));
    let rc = Riccati::new(spec, beta, 0.0, theta);
    let nodes_inc = grid_cfg.nodes(x_lo, beta);
    let nodes_desc: Vec<f64> = nodes_inc.iter().rev().copied().collect();
    let shot = shoot_direct(&rc, beta, &nodes_desc, threshold, None, None)?;
    let backward = solution_from_shot(spec, &rc, beta, 0.0, theta, &shot, Method::RiccatiDirect);

    let splice = splice_point(spec, &backward);
    let bvp = match (splice, shot.end) {
        (None, ShotEnd::Completed) => backward,
        (None, ShotEnd::Underflow { x, h, .. }) => return Err(Error::StepUnderflow { x, h }),
        (None, _) => {
            let x_end = backward.grid[0];
            return Err(Error::BlowUp {
                x: x_end,
                direction: match shot.end {
                    ShotEnd::Escaped { direction, .. } => direction,
                    _ => EscapeDirection::Down,
                },
                threshold,
                partial: Box::new(backward),
            });
        }
        (Some(k), _) => splice_forward(spec, &rc, &backward, k, &nodes_inc)?,
    };

    let tails = hermite_tail_integrals(&bvp.grid, &bvp.phi, &bvp.phi_x);
    let v: Vec<f64> = tails.iter().map(|t| -t).collect();
    let psi_star = bvp
        .grid
        .iter()
        .zip(&bvp.phi)
        .map(|(&x, &p)| -spec.epsilon * spec.sigma(x) * p)
        .collect();
    Ok(FreeBoundarySolution {
        theta,
        beta_star: beta,
        lambda: spec.ell(beta, theta),
        bvp,
        v,
        psi_star,
        bracket: (lm.xhat, lm.xhat_lower),
        landmarks: *lm,
        beta_width,
        slope_bound: bound,
    })
}

/// Index (into the increasing backward grid) of the splice point: the largest
/// abscissa where some backward error committed above it has been amplified by
/// more than [`SPLICE_AMPLIFICATION`].
fn splice_point(spec: &ProblemSpec, sol: &BvpSolution) -> Option<usize> {
    let n = sol.grid.len();
    let rate = |i: usize| {
        let x = sol.grid[i];
        2.0 * spec.b(x) / spec.sigma2(x) - 2.0 * spec.epsilon * sol.phi[i]
    };
    let limit = SPLICE_AMPLIFICATION.ln();
    let mut a = 0.0;
    let mut a_min: f64 = 0.0;
    let mut prev_rate = rate(n - 1);
    for i in (0..n - 1).rev() {
        let r = rate(i);
        a += 0.5 * (r + prev_rate) * (sol.grid[i + 1] - sol.grid[i]);
        prev_rate = r;
        a_min = a_min.min(a);
        if a - a_min >= limit {
            return Some(i);
        }
    }
    None
}

fn splice_forward(
    spec: &ProblemSpec,
    rc: &Riccati,
    backward: &BvpSolution,
    k: usize,
    nodes_inc: &[f64],
) -> Result<BvpSolution> {
    let x_splice = backward.grid[k];
    let x_lo = nodes_inc[0];
    let below: Vec<f64> = nodes_inc
        .iter()
        .copied()
        .filter(|&x| x <= x_splice)
        .collect();

    // Start on the slow manifold: bφ − (ε/2)σ²φ² = S.
    let (b0, s20, src) = (spec.b(x_lo), spec.sigma2(x_lo), rc.s(x_lo));
    let disc = b0 * b0 - 2.0 * spec.epsilon * s20 * src;
    let phi0 = if b0 > 0.0 && disc >= 0.0 {
        2.0 * src / (b0 + disc.sqrt())
    } else if b0 != 0.0 {
        src / b0
    } else {
        backward.phi[k]
    };
    let opts = StiffOptions {
        rtol: spec.tol.ode,
        atol: spec.tol.ode,
        h_min: 1e-18 * backward.beta,
        max_steps: 50_000_000,
    };
    let fwd = stiff::integrate_to_points(rc, x_lo, phi0, &below, 1e-3 * x_lo, &opts).map_err(
        |e| match e {
            stiff::StiffError::StepUnderflow { x, h } => Error::StepUnderflow { x, h },
            stiff::StiffError::MaxSteps { x } => Error::StepUnderflow { x, h: 0.0 },
        },
    )?;
    let mismatch = (fwd[fwd.len() - 1] - backward.phi[k]).abs();

    let mut grid = below.clone();
    let mut phi = fwd;
    grid.pop();
    phi.pop();
    grid.extend_from_slice(&backward.grid[k..]);
    phi.extend_from_slice(&backward.phi[k..]);
    let beta = backward.beta;
    let phi_x = grid
        .iter()
        .zip(&phi)
        .map(|(&x, &p)| {
            if x == beta {
                -spec.c_x(beta)
            } else {
                rc.slope(x, p)
            }
        })
        .collect();
    Ok(BvpSolution {
        beta,
        gamma: backward.gamma,
        theta: backward.theta,
        grid,
        phi,
        phi_x,
        method: Method::RiccatiDirect,
        assembly: Assembly::Spliced {
            x_splice,
            mismatch,
            x_backward_end: backward.grid[0],
        },
    })
}

/// One row of the variational-inequality check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViRow {
    pub x: f64,
    /// `𝓛V + π − λ`.
    pub generator_branch: f64,
    /// `−V_x − c`.
    pub gradient_branch: f64,
    pub violation: f64,
}

/// Residuals of `max{𝓛V + π − λ, −V_x − c} = 0` on `(x_lo, 2β]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViReport {
    pub rows: Vec<ViRow>,
    pub max_violation: f64,
    pub tol: f64,
}

impl ViReport {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tol
    }
}

/// Evaluates both branches of the variational inequality on the solution grid
/// and on `[β, 2β]`.
pub fn check_variational_inequality(spec: &ProblemSpec, fbs: &FreeBoundarySolution) -> ViReport {
    let beta = fbs.beta_star;
    let lambda = fbs.lambda;
    let theta = fbs.theta;
    let eps = spec.epsilon;
    let tol = 1e-6 * (1.0 + lambda.abs());
    let mut rows = Vec::new();
    let mut push = |x: f64, g1: f64, g2: f64| {
        let violation = g1.max(g2).max(0.0).max(g1.abs().min(g2.abs()));
        rows.push(ViRow {
            x,
            generator_branch: g1,
            gradient_branch: g2,
            violation,
        });
    };
    let bvp = &fbs.bvp;
    for i in 0..bvp.grid.len() - 1 {
        let x = bvp.grid[i];
        let (p, px) = (bvp.phi[i], bvp.phi_x[i]);
        let s2 = spec.sigma2(x);
        let g1 = 0.5 * s2 * px + spec.b(x) * p - 0.5 * eps * s2 * p * p + spec.pi(x, theta)
            - lambda;
        let g2 = -p - spec.c(x);
        push(x, g1, g2);
    }
    for x in linspace(beta, 2.0 * beta, 401) {
        push(x, spec.ell(x, theta) - lambda, 0.0);
    }
    let max_violation = rows.iter().map(|r| r.violation).fold(0.0, f64::max);
    ViReport {
        rows,
        max_violation,
        tol,
    }
}

/// Sup-distance between perturbed and unperturbed slopes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationRow {
    pub gamma: f64,
    pub gap: f64,
    /// `gap / |γ|` (0 for `γ = 0`).
    pub ratio: f64,
}

/// Sup over the grid of `|φ^γ − φ^0|` for each `γ`. The grid's lower end
/// bounds the region where the comparison is made.
pub fn perturbation_gap(
    spec: &ProblemSpec,
    beta: f64,
    theta: f64,
    gammas: &[f64],
    cfg: &GridConfig,
) -> Result<Vec<PerturbationRow>> {
    let base = solve_bvp(spec, beta, 0.0, theta, cfg)?;
    gammas
        .iter()
        .map(|&g| {
            if g == 0.0 {
                return Ok(PerturbationRow {
                    gamma: 0.0,
                    gap: 0.0,
                    ratio: 0.0,
                });
            }
            let pert = solve_bvp(spec, beta, g, theta, cfg)?;
            let gap = base
                .phi
                .iter()
                .zip(&pert.phi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(PerturbationRow {
                gamma: g,
                gap,
                ratio: gap / g.abs(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_extraction_model, CaseStudyParams};

    fn case() -> ProblemSpec {
        build_extraction_model(CaseStudyParams::default()).unwrap()
    }

    #[test]
    fn terminal_condition_holds() {
        let s = case();
        let sol = solve_bvp(&s, 3.0, 0.0, 1.0, &GridConfig::with_x_lo(1.0)).unwrap();
        assert_eq!(*sol.grid.last().unwrap(), 3.0);
        assert!((sol.phi.last().unwrap() + s.c(3.0)).abs() <= 1e-12);
    }

    #[test]
    fn landmarks_bracket_membership() {
        let s = case();
        let lm = find_landmarks(&s, 1.0).unwrap();
        assert!(in_b(&s, lm.xhat_lower, 1.0).unwrap().member);
        assert!(!in_b(&s, lm.xhat, 1.0).unwrap().member);
    }

    #[test]
    fn free_boundary_inside_bracket() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        assert!(fbs.beta_star > 1.9 && fbs.beta_star < 4.3);
        assert_eq!(fbs.lambda, s.ell(fbs.beta_star, 1.0));
        assert!(fbs.smooth_fit_residual(&s) < 1e-10);
        let (_, gap) = fbs.bvp.min_gap(&s);
        assert!(gap >= -s.tol_gap(), "gap {gap}");
    }

    #[test]
    fn ode_residual_is_small() {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let tol = s.tol.ode * (1.0 + fbs.lambda.abs());
        for i in 0..fbs.bvp.grid.len() {
            assert!(fbs.bvp.ode_residual(&s, i).abs() <= tol);
        }
    }
}
