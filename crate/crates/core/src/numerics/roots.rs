//! Bracketing and bisection for scalar roots.

/// Bisection on `[a, b]` where `pred(a)` is true and `pred(b)` is false.
/// Returns the final bracket `(a, b)` with `|b - a| <= tol`.
pub fn bisect_predicate<P: FnMut(f64) -> bool>(
    mut pred: P,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if pred(m) {
            a = m;
        } else {
            b = m;
        }
    }
    (a, b)
}

/// Root of `f` on `[a, b]` given `f(a)` and `f(b)` of opposite sign.
pub fn bisect_root<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa_pos = f(a) > 0.0;
    let (lo, hi) = bisect_predicate(|x| (f(x) > 0.0) == fa_pos, a, b, tol, 400);
    0.5 * (lo + hi)
}

/// First adjacent pair on the increasing grid `xs` where `f` changes from positive
/// to nonpositive.
pub fn first_downcrossing<F: FnMut(f64) -> f64>(mut f: F, xs: &[f64]) -> Option<(f64, f64)> {
    let mut prev = (xs[0], f(xs[0]));
    if prev.1 <= 0.0 {
        return None;
    }
    for &x in &xs[1..] {
        let v = f(x);
        if v <= 0.0 {
            return Some((prev.0, x));
        }
        prev = (x, v);
    }
    None
}

/// Logarithmically spaced points from `a` to `b` inclusive.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                a
            } else if i + 1 == n {
                b
            } else {
                (la + (lb - la) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}
