//! Advisory checks of the standing assumptions on sample grids.

use std::fmt;

use super::{find_landmarks, find_robust_landmarks, speed_measure_ref, ModelKind, ProblemSpec};

/// Outcome of one assumption check.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub description: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Collected checks; failures are data, never errors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    fn push(&mut self, id: &'static str, description: &'static str, failures: Vec<String>) {
        let passed = failures.is_empty();
        let detail = if passed {
            "ok".to_string()
        } else {
            let mut d = failures[..failures.len().min(3)].join("; ");
            if failures.len() > 3 {
                d.push_str(&format!("; and {} more", failures.len() - 3));
            }
            d
        };
        self.checks.push(AssumptionCheck {
            id,
            description,
            passed,
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<16} {:<4} {} ({})",
                c.id,
                if c.passed { "PASS" } else { "FAIL" },
                c.description,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Default sample grids: `theta` over [0.25, 4] and `x` over [0.01, 10].
pub fn default_grids() -> (Vec<f64>, Vec<f64>) {
    let thetas = crate::numerics::roots::geomspace(0.25, 4.0, 9);
    let xs = crate::numerics::roots::geomspace(0.01, 10.0, 40);
    (thetas, xs)
}

/// Checks the standing assumptions on the given sample grids (both increasing).
pub fn validate_assumptions(
    spec: &ProblemSpec,
    theta_grid: &[f64],
    x_grid: &[f64],
) -> ValidationReport {
    let mut r = ValidationReport::default();
    let xs: Vec<f64> = x_grid.iter().map(|&x| x * spec.scale).collect();

    // Regularity and growth of the coefficients.
    let mut fails = Vec::new();
    let zeta = spec.diffusion.growth_exponent;
    for &x in &xs {
        let s = spec.sigma(x);
        if !(s > 0.0) {
            fails.push(format!("sigma({x:.4}) = {s}"));
        }
        let g = (spec.b(x).abs() + s.abs()) / (1.0 + x.powf(zeta));
        if !g.is_finite() {
            fails.push(format!("growth ratio not finite at {x:.4}"));
        }
    }
    r.push("volatility", "volatility positive, coefficients of polynomial growth", fails);

    // Non-attainability of 0: Cauchy stabilization of the speed measure near 0.
    let mut fails = Vec::new();
    let x_ref = spec.scale;
    let masses: Vec<Option<f64>> = [1e-2, 1e-4, 1e-6]
        .iter()
        .map(|&x0| speed_measure_ref(spec, x0 * spec.scale, x_ref, x_ref).ok())
        .collect();
    match (masses[0], masses[1], masses[2]) {
        (Some(_), Some(m4), Some(m6)) => {
            if (m6 - m4).abs() > 1e-6 {
                fails.push(format!("speed measure not stabilized: {m4} vs {m6}"));
            }
        }
        _ => fails.push("speed measure quadrature failed".into()),
    }
    r.push("speed-measure", "speed measure finite near 0", fails);

    // Cost bounded and nonincreasing.
    let mut fails = Vec::new();
    for w in xs.windows(2) {
        let (c0, c1) = (spec.c(w[0]), spec.c(w[1]));
        if c1 > c0 + 1e-12 {
            fails.push(format!("c increases on [{:.4}, {:.4}]", w[0], w[1]));
        }
    }
    for &x in &xs {
        let c = spec.c(x);
        if c < spec.cost.c_lo - 1e-12 || c > spec.cost.c_hi + 1e-12 {
            fails.push(format!("c({x:.4}) = {c} outside bounds"));
        }
    }
    r.push("cost", "cost bounded and nonincreasing", fails);

    // Profit nondecreasing and concave in x.
    let mut fails = Vec::new();
    for &t in theta_grid {
        for &x in &xs {
            if (spec.profit.pi_x)(x, t) < 0.0 {
                fails.push(format!("pi_x({x:.4}, {t}) < 0"));
            }
        }
        for w in xs.windows(3) {
            let s0 = (spec.pi(w[1], t) - spec.pi(w[0], t)) / (w[1] - w[0]);
            let s1 = (spec.pi(w[2], t) - spec.pi(w[1], t)) / (w[2] - w[1]);
            if s1 - s0 > 1e-10 {
                fails.push(format!("pi(., {t}) not concave near {:.4}", w[1]));
            }
        }
    }
    r.push("profit-shape", "profit nondecreasing and concave", fails);

    let mut fails = Vec::new();
    for &t in theta_grid {
        for &x in &xs {
            let v = (spec.profit.pi_xtheta)(x, t);
            if !(v < 0.0) {
                fails.push(format!("pi_xtheta({x:.4}, {t}) = {v}"));
            }
        }
    }
    r.push("cross-derivative", "strictly negative cross derivative", fails);

    // Interaction functions.
    let mut fails = Vec::new();
    for w in xs.windows(2) {
        if !(spec.f(w[1]) > spec.f(w[0])) {
            fails.push(format!("f not increasing near {:.4}", w[0]));
        }
        if !(spec.big_f(w[1]) > spec.big_f(w[0])) {
            fails.push(format!("F not increasing near {:.4}", w[0]));
        }
    }
    let d = spec.interaction.delta;
    let cf = xs
        .iter()
        .map(|&x| spec.f(x).abs() / (1.0 + x.powf(d)))
        .fold(0.0, f64::max);
    let cbig = xs
        .iter()
        .map(|&x| spec.big_f(x).abs() / (1.0 + x.powf(1.0 / d)))
        .fold(0.0, f64::max);
    if !(cf.is_finite() && cbig.is_finite()) {
        fails.push("interaction growth bound not finite".into());
    }
    r.push("interaction", "interaction increasing with polynomial growth", fails);

    // Landmark structure.
    let mut fails = Vec::new();
    for &t in theta_grid {
        match find_landmarks(spec, t) {
            Ok(lm) => {
                for &x in &xs {
                    let v = spec.ell_x(x, t);
                    if x > lm.x_min && x < lm.xhat * (1.0 - 1e-8) && v <= 0.0 {
                        fails.push(format!("ell_x({x:.4}, {t}) <= 0 left of the maximizer"));
                    }
                    if x > lm.xhat * (1.0 + 1e-8) && x <= lm.xhat_lower && v >= 0.0 {
                        fails.push(format!("ell_x({x:.4}, {t}) >= 0 right of the maximizer"));
                    }
                }
                if !lm.ell_at_zero.is_finite() {
                    fails.push(format!("ell(0, {t}) not finite"));
                }
            }
            Err(e) => fails.push(format!("theta {t}: {e}")),
        }
    }
    if spec.kind == ModelKind::Logistic {
        if let Some(p) = spec.params {
            let v = 2.0 * p.alpha - spec.epsilon * p.sigma * p.sigma * p.cost;
            if v >= 0.0 {
                fails.push(format!("logistic condition 2α − εσ²c = {v} is not negative"));
            }
        }
    }
    r.push("landmarks", "single-peaked landmark function returning to its value at 0", fails);

    // Robust limit and Lipschitz dependence on theta.
    let mut fails = Vec::new();
    for &x in &xs {
        let k = spec.profit.kappa.eval(x);
        for w in theta_grid.windows(2) {
            let (p0, p1) = (spec.pi(x, w[0]), spec.pi(x, w[1]));
            if p1 > p0 + 1e-12 {
                fails.push(format!("pi({x:.4}, .) increases between {} and {}", w[0], w[1]));
            }
            let bound = spec.profit.lipschitz_c
                * (1.0 + x.powf(spec.profit.lipschitz_delta))
                * (w[1] - w[0]).abs();
            if (p1 - p0).abs() > bound + 1e-12 {
                fails.push(format!("Lipschitz bound fails at x = {x:.4}"));
            }
        }
        for &t in theta_grid {
            if spec.pi(x, t) < k - 1e-12 {
                fails.push(format!("pi({x:.4}, {t}) below its robust limit"));
            }
        }
    }
    if let Err(e) = find_robust_landmarks(spec) {
        fails.push(format!("robust landmarks: {e}"));
    }
    r.push("robust-limit", "profit decreases to its robust limit, Lipschitz in theta", fails);

    r
}
