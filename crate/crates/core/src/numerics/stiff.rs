//! Stiffly stable forward integrator for scalar Riccati equations
//! `y' = p(x) + q(x) y + r y^2`.
//!
//! Each step is an implicit Euler step whose quadratic is solved in closed form;
//! two half steps and one full step are combined by Richardson extrapolation,
//! which also yields the local error estimate.

/// Coefficients `(p, q)` of the equation at `x`; `r` is constant.
pub trait RiccatiCoefficients {
    fn pq(&self, x: f64) -> (f64, f64);
    fn r(&self) -> f64;
}

#[derive(Clone, Copy, Debug)]
pub struct StiffOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StiffError {
    StepUnderflow { x: f64, h: f64 },
    MaxSteps { x: f64 },
}

fn implicit_euler<C: RiccatiCoefficients>(c: &C, x1: f64, y0: f64, h: f64) -> Option<f64> {
    let (p, q) = c.pq(x1);
    let r = c.r();
    let a = r * h;
    let bb = 1.0 - h * q;
    let cc = y0 + h * p;
    if a == 0.0 {
        return (bb != 0.0).then(|| cc / bb);
    }
    let disc = bb * bb - 4.0 * a * cc;
    if disc < 0.0 || bb <= 0.0 {
        return None;
    }
    let y = 2.0 * cc / (bb + disc.sqrt());
    y.is_finite().then_some(y)
}

/// Integrates forward from `(x0, y0)` and returns the solution at each of the
/// increasing abscissae `xs` (all `>= x0`).
pub fn integrate_to_points<C: RiccatiCoefficients>(
    c: &C,
    x0: f64,
    y0: f64,
    xs: &[f64],
    h_init: f64,
    opts: &StiffOptions,
) -> Result<Vec<f64>, StiffError> {
    let mut out = Vec::with_capacity(xs.len());
    let mut x = x0;
    let mut y = y0;
    let mut h = h_init;
    let mut steps = 0usize;
    for &target in xs {
        while x < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(StiffError::MaxSteps { x });
            }
            let hh = h.min(target - x);
            let full = implicit_euler(c, x + hh, y, hh);
            let half = implicit_euler(c, x + 0.5 * hh, y, 0.5 * hh)
                .and_then(|ym| implicit_euler(c, x + hh, ym, 0.5 * hh));
            match (full, half) {
                (Some(yf), Some(yh)) => {
                    let err = (yh - yf).abs();
                    let sc = opts.atol + opts.rtol * yh.abs();
                    if err <= sc {
                        x = if hh == target - x { target } else { x + hh };
                        y = 2.0 * yh - yf;
                        let fac = if err == 0.0 {
                            4.0
                        } else {
                            (0.9 * (sc / err).sqrt()).clamp(0.2, 4.0)
                        };
                        h = hh * fac;
                    } else {
                        h = hh * (0.9 * (sc / err).sqrt()).clamp(0.1, 0.9);
                    }
                }
                _ => h = hh * 0.25,
            }
            if h < opts.h_min {
                return Err(StiffError::StepUnderflow { x, h });
            }
        }
        out.push(y);
    }
    Ok(out)
}
