//! Adaptive Dormand-Prince 5(4) integrator with dense output.
//!
//! Integration may run in either direction; the sign of `x_end - x0` fixes it.

/// Step-size and tolerance settings for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest admissible step magnitude before the run is abandoned.
    pub h_min: f64,
    /// Largest admissible step magnitude.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Dopri5Options {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }
}

/// Verdict returned by the per-step observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// How an integration run ended.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Completed,
    Stopped { x: f64 },
    StepUnderflow { x: f64, h: f64 },
    MaxSteps { x: f64 },
}

/// One accepted step together with its continuous extension.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub x0: f64,
    pub x1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub f1: [f64; N],
    rc: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    /// Fourth-order interpolant valid for `x` between `x0` and `x1`.
    pub fn eval(&self, x: f64) -> [f64; N] {
        let h = self.x1 - self.x0;
        let s = (x - self.x0) / h;
        let s1 = 1.0 - s;
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rc[0][i]
                + s * (self.rc[1][i]
                    + s1 * (self.rc[2][i] + s * (self.rc[3][i] + s1 * self.rc[4][i])));
        }
        out
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = if self.x0 <= self.x1 {
            (self.x0, self.x1)
        } else {
            (self.x1, self.x0)
        };
        x >= lo && x <= hi
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

fn all_finite<const N: usize>(v: &[f64; N]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates `y' = f(x, y)` from `x0` to `x_end`, calling `observer` after every
/// accepted step. The observer may stop the run early.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    h_init: f64,
    opts: &Dopri5Options,
    mut observer: O,
) -> Outcome
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(&DenseStep<N>) -> Control,
{
    let dir = if x_end >= x0 { 1.0 } else { -1.0 };
    let span = (x_end - x0).abs();
    if span == 0.0 {
        return Outcome::Completed;
    }
    let mut x = x0;
    let mut y = y0;
    let mut k1 = f(x, &y);
    let mut h = h_init.abs().min(span).min(opts.h_max).max(opts.h_min) * dir;
    let mut last_rejected = false;

    for _ in 0..opts.max_steps {
        let remaining = (x_end - x) * dir;
        if remaining <= 0.0 {
            return Outcome::Completed;
        }
        if h.abs() >= remaining || remaining - h.abs() < 1e-12 * span {
            h = remaining * dir;
        }

        let k2 = f(x + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(x + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            x + C4 * h,
            &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            x + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            x + h,
            &axpy(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y1 = axpy(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = f(x + h, &y1);

        let mut err = 0.0;
        let mut finite = all_finite(&y1) && all_finite(&k7);
        if finite {
            for i in 0..N {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
                err += (e / sc) * (e / sc);
            }
            err = (err / N as f64).sqrt();
            finite = err.is_finite();
        }

        if finite && err <= 1.0 {
            let mut rc = [[0.0; N]; 5];
            for i in 0..N {
                let dy = y1[i] - y[i];
                let bspl = h * k1[i] - dy;
                rc[0][i] = y[i];
                rc[1][i] = dy;
                rc[2][i] = bspl;
                rc[3][i] = dy - h * k7[i] - bspl;
                rc[4][i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                        + D7 * k7[i]);
            }
            let step = DenseStep {
                x0: x,
                x1: x + h,
                y0: y,
                y1,
                f1: k7,
                rc,
            };
            x += h;
            y = y1;
            k1 = k7;
            if observer(&step) == Control::Stop {
                return Outcome::Stopped { x };
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            let fac = if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
            h = (h.abs() * fac).min(opts.h_max) * dir;
        } else {
            last_rejected = true;
            let fac = if finite {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= fac;
            if h.abs() < opts.h_min {
                return Outcome::StepUnderflow { x, h: h.abs() };
            }
        }
    }
    Outcome::MaxSteps { x }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_forward_and_backward() {
        let opts = Dopri5Options::with_tol(1e-11);
        let mut last = [0.0; 1];
        let out = integrate(|_, y| [-y[0]], 0.0, [1.0], 2.0, 0.1, &opts, |s| {
            last = s.y1;
            Control::Continue
        });
        assert_eq!(out, Outcome::Completed);
        assert!((last[0] - (-2.0f64).exp()).abs() < 1e-9);

        let out = integrate(|_, y| [-y[0]], 2.0, [1.0], 0.0, 0.1, &opts, |s| {
            last = s.y1;
            Control::Continue
        });
        assert_eq!(out, Outcome::Completed);
        assert!((last[0] - 2.0f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn dense_output_is_fourth_order_accurate() {
        let opts = Dopri5Options::with_tol(1e-10);
        let mut worst: f64 = 0.0;
        integrate(
            |x, _| [x.cos()],
            0.0,
            [0.0],
            6.0,
            0.5,
            &opts,
            |s| {
                for j in 1..10 {
                    let x = s.x0 + (s.x1 - s.x0) * j as f64 / 10.0;
                    worst = worst.max((s.eval(x)[0] - x.sin()).abs());
                }
                Control::Continue
            },
        );
        assert!(worst < 1e-8, "dense error {worst}");
    }

    #[test]
    fn observer_can_stop() {
        let opts = Dopri5Options::with_tol(1e-8);
        let out = integrate(|_, _| [1.0], 0.0, [0.0], 10.0, 0.1, &opts, |s| {
            if s.y1[0] > 3.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        });
        assert!(matches!(out, Outcome::Stopped { x } if x > 3.0));
    }
}
