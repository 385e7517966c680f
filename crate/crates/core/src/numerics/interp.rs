//! Piecewise cubic Hermite interpolation and the matching quadrature rule.

/// Cubic Hermite spline through `(x_i, y_i)` with slopes `d_i`.
#[derive(Clone, Debug)]
pub struct Hermite {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Hermite {
    /// Spline with prescribed slopes. `x` must be strictly increasing.
    pub fn with_slopes(x: Vec<f64>, y: Vec<f64>, d: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len() && y.len() == d.len());
        Self { x, y, d }
    }

    /// Shape-preserving spline with Fritsch-Carlson slopes.
    pub fn monotone(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && n == y.len());
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            for i in 1..n - 1 {
                if del[i - 1] * del[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Self { x, y, d }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    fn locate(&self, t: f64) -> usize {
        let i = self.x.partition_point(|&v| v <= t);
        i.clamp(1, self.x.len() - 1) - 1
    }

    /// Value at `t`; outside the knot range the end segment is extended.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    /// First derivative at `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let g00 = (6.0 * s2 - 6.0 * s) / h;
        let g10 = 3.0 * s2 - 4.0 * s + 1.0;
        let g01 = (-6.0 * s2 + 6.0 * s) / h;
        let g11 = 3.0 * s2 - 2.0 * s;
        g00 * self.y[i] + g10 * self.d[i] + g01 * self.y[i + 1] + g11 * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Exact integral of the Hermite cubic on each interval, accumulated from the
/// right end: `out[i] = ∫_{x_i}^{x_last}`.
pub fn hermite_tail_integrals(x: &[f64], y: &[f64], d: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1] + hermite_segment(x[i], x[i + 1], y[i], y[i + 1], d[i], d[i + 1]);
    }
    out
}

/// Integral of the Hermite cubic with end data `(ya, da)`, `(yb, db)` over `[a, b]`.
pub fn hermite_segment(a: f64, b: f64, ya: f64, yb: f64, da: f64, db: f64) -> f64 {
    let h = b - a;
    0.5 * h * (ya + yb) + h * h * (da - db) / 12.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubic_with_exact_slopes() {
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.7).collect();
        let f = |t: f64| t * t * t - 2.0 * t;
        let df = |t: f64| 3.0 * t * t - 2.0;
        let s = Hermite::with_slopes(
            x.clone(),
            x.iter().map(|&t| f(t)).collect(),
            x.iter().map(|&t| df(t)).collect(),
        );
        for t in [0.1, 1.3, 2.9, 3.4] {
            assert!((s.eval(t) - f(t)).abs() < 1e-12);
            assert!((s.derivative(t) - df(t)).abs() < 1e-11);
        }
        let tails = hermite_tail_integrals(
            &x,
            &x.iter().map(|&t| f(t)).collect::<Vec<_>>(),
            &x.iter().map(|&t| df(t)).collect::<Vec<_>>(),
        );
        let b = x[5];
        let exact = (b.powi(4) / 4.0 - b * b) - 0.0;
        assert!((tails[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn monotone_data_gives_monotone_spline() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![0.0, 0.1, 0.1, 2.0, 2.1];
        let s = Hermite::monotone(x, y);
        let mut prev = s.eval(0.0);
        for i in 1..=400 {
            let v = s.eval(i as f64 * 0.01);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }
}
