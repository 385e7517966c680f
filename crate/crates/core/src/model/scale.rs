//! Scale density and speed measure of the uncontrolled diffusion.

use super::ProblemSpec;
use crate::error::Result;
use crate::numerics::quad::integrate_log;

fn drift_ratio(spec: &ProblemSpec, y: f64) -> f64 {
    2.0 * spec.b(y) / spec.sigma2(y)
}

/// ∫_{x0}^{x} 2b/σ².
fn log_inverse_scale(spec: &ProblemSpec, x: f64, x0: f64) -> Result<f64> {
    if x == x0 {
        return Ok(0.0);
    }
    Ok(integrate_log(|y| drift_ratio(spec, y), x0, x, 1e-13, 1e-12)?)
}

/// Derivative of the scale function, `S_x(x) = exp(−∫_{x0}^{x} 2b/σ²)`.
pub fn scale_density(spec: &ProblemSpec, x: f64, x0: f64) -> Result<f64> {
    Ok((-log_inverse_scale(spec, x, x0)?).exp())
}

/// Speed measure of `(a, b)` with the scale function referenced at `x_ref`.
pub fn speed_measure_ref(spec: &ProblemSpec, a: f64, b: f64, x_ref: f64) -> Result<f64> {
    if a >= b {
        return Ok(0.0);
    }
    let mut failure = None;
    let value = integrate_log(
        |y| match log_inverse_scale(spec, y, x_ref) {
            Ok(l) => 2.0 / spec.sigma2(y) * l.exp(),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        a,
        b,
        1e-300,
        spec.tol.quad,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(value?)
}

/// Speed measure of `(a, b)` with the scale function referenced at `b`.
pub fn speed_measure(spec: &ProblemSpec, a: f64, b: f64) -> Result<f64> {
    speed_measure_ref(spec, a, b, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_extraction_model, CaseStudyParams, ScalarField};

    fn case() -> ProblemSpec {
        build_extraction_model(CaseStudyParams::default()).unwrap()
    }

    #[test]
    fn zero_drift_has_unit_scale_density() {
        let mut s = case();
        s.diffusion.b = ScalarField::constant(0.0);
        for x in [0.1, 1.0, 5.0] {
            assert_eq!(scale_density(&s, x, 1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn case_study_scale_density_closed_form() {
        // ∫_{x0}^{x} 2(1−y)/y² dy = 2(1/x0 − 1/x) − 2 ln(x/x0)
        let s = case();
        let x0: f64 = 1.0;
        for x in [0.05f64, 0.2, 3.0] {
            let exact = (-(2.0 * (1.0 / x0 - 1.0 / x) - 2.0 * (x / x0).ln())).exp();
            let got = scale_density(&s, x, x0).unwrap();
            assert!((got / exact - 1.0).abs() < 1e-10, "{x}: {got} vs {exact}");
        }
        // Asymptotic form exp(2ακ/(σ²x) + (2α/σ²) ln x) up to a constant factor.
        let ratio = |x: f64| scale_density(&s, x, x0).unwrap() / (2.0 / x + 2.0 * x.ln()).exp();
        assert!((ratio(1e-2) / ratio(5e-2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_interval_has_no_mass() {
        let s = case();
        assert_eq!(speed_measure(&s, 0.7, 0.7).unwrap(), 0.0);
        let m = speed_measure(&s, 1e-8, 3.0).unwrap();
        assert!(m > 0.0 && m.is_finite());
    }
}
