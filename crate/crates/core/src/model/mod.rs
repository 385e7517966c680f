//! Problem data: diffusion, cost, profit, interaction, ambiguity level, and the
//! landmark function built from them.

mod config;
mod landmarks;
mod scale;
mod validate;

use std::fmt;
use std::sync::Arc;

pub use config::{ModelKind, ProblemConfig};
pub use landmarks::{
    eval_ell, eval_ell_robust, find_landmarks, find_robust_landmarks, EllLandmarks,
};
pub use scale::{scale_density, speed_measure, speed_measure_ref};
pub use validate::{default_grids, validate_assumptions, AssumptionCheck, ValidationReport};

use crate::error::{Error, Result};

/// Shared handle to a real function of one variable.
pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Shared handle to a real function of `(x, theta)`.
pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// How the derivative of a [`ScalarField`] is obtained.
#[derive(Clone)]
pub enum Derivative {
    Analytic(Fn1),
    /// Central difference with step `h_rel * (1 + |x|)`.
    Numeric { h_rel: f64 },
}

/// A real function on `(0, ∞)` with its first derivative.
#[derive(Clone)]
pub struct ScalarField {
    value: Fn1,
    derivative: Derivative,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.derivative {
            Derivative::Analytic(_) => "analytic",
            Derivative::Numeric { .. } => "numeric",
        };
        write!(f, "ScalarField({kind} derivative)")
    }
}

impl ScalarField {
    pub fn new<V, D>(value: V, derivative: D) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            derivative: Derivative::Analytic(Arc::new(derivative)),
        }
    }

    /// Field whose derivative is taken by central differences.
    pub fn numeric<V>(value: V) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            derivative: Derivative::Numeric { h_rel: 1e-5 },
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match &self.derivative {
            Derivative::Analytic(d) => d(x),
            Derivative::Numeric { h_rel } => self.central_difference(x, h_rel * (1.0 + x.abs())),
        }
    }

    pub fn has_analytic_derivative(&self) -> bool {
        matches!(self.derivative, Derivative::Analytic(_))
    }

    pub fn central_difference(&self, x: f64, h: f64) -> f64 {
        (self.eval(x + h) - self.eval(x - h)) / (2.0 * h)
    }

    /// Second derivative by central differences of the first derivative.
    pub fn second_deriv(&self, x: f64) -> f64 {
        if let Derivative::Analytic(_) = self.derivative {
            let h = 1e-5 * (1.0 + x.abs());
            let (lo, hi) = (x - h, x + h);
            if lo > 0.0 {
                return (self.deriv(hi) - self.deriv(lo)) / (2.0 * h);
            }
            return (self.deriv(x + h) - self.deriv(x)) / h;
        }
        let h = 1e-4 * (1.0 + x.abs());
        (self.eval(x + h) - 2.0 * self.eval(x) + self.eval(x - h)) / (h * h)
    }
}

/// Drift and volatility of the uncontrolled state.
#[derive(Clone, Debug)]
pub struct DiffusionSpec {
    pub b: ScalarField,
    pub sigma: ScalarField,
    pub growth_exponent: f64,
}

/// Proportional cost of control with its bounds.
#[derive(Clone, Debug)]
pub struct CostSpec {
    pub c: ScalarField,
    pub c_lo: f64,
    pub c_hi: f64,
}

/// Running profit, its derivatives, and its limit for large `theta`.
#[derive(Clone)]
pub struct ProfitSpec {
    pub pi: Fn2,
    pub pi_x: Fn2,
    pub pi_xtheta: Fn2,
    pub kappa: ScalarField,
    pub lipschitz_delta: f64,
    pub lipschitz_c: f64,
}

impl fmt::Debug for ProfitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProfitSpec")
            .field("kappa", &self.kappa)
            .field("lipschitz_delta", &self.lipschitz_delta)
            .field("lipschitz_c", &self.lipschitz_c)
            .finish()
    }
}

/// Moment test function `f` and aggregator `F` of the mean-field interaction.
#[derive(Clone, Debug)]
pub struct InteractionSpec {
    pub f: ScalarField,
    pub big_f: ScalarField,
    pub delta: f64,
}

/// Numerical tolerances used throughout the pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Absolute tolerance on landmark roots.
    pub root: f64,
    /// Local error tolerance of the shooting integrator.
    pub ode: f64,
    /// Bisection width for the free boundary.
    pub beta: f64,
    /// Quadrature tolerance.
    pub quad: f64,
    /// Fixed-point residual tolerance.
    pub fp: f64,
    /// Domain floor relative to the maximizer of the landmark function.
    pub x_min_rel: f64,
    /// Upper end of landmark searches relative to the state scale.
    pub x_max_search_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            root: 1e-10,
            ode: 1e-10,
            beta: 1e-9,
            quad: 1e-8,
            fp: 1e-7,
            x_min_rel: 1e-8,
            x_max_search_rel: 100.0,
        }
    }
}

/// Complete data of the game.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub diffusion: DiffusionSpec,
    pub cost: CostSpec,
    pub profit: ProfitSpec,
    pub interaction: InteractionSpec,
    /// Ambiguity level.
    pub epsilon: f64,
    /// Characteristic state scale used to size searches.
    pub scale: f64,
    pub tol: Tolerances,
    pub kind: ModelKind,
    /// Parameters this problem was built from, when it came from a preset.
    pub params: Option<CaseStudyParams>,
}

/// Parameters of the natural-resource extraction example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaseStudyParams {
    pub kappa: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub eta: f64,
    pub cost: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for CaseStudyParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            alpha: 1.0,
            sigma: 1.0,
            eta: 1.0,
            cost: 1.0,
            delta: 0.6,
            epsilon: 1.0,
        }
    }
}

impl CaseStudyParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("alpha", self.alpha),
            ("sigma", self.sigma),
            ("eta", self.eta),
            ("cost", self.cost),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                reason: format!("must lie in (0, 1), got {}", self.delta),
            });
        }
        Ok(())
    }
}

/// Smallest `theta` at which the preset profits' Lipschitz constant is computed.
const LIPSCHITZ_THETA_FLOOR: f64 = 0.1;

fn isoelastic_profit(p: &CaseStudyParams) -> ProfitSpec {
    let (d, eta) = (p.delta, p.eta);
    ProfitSpec {
        pi: Arc::new(move |x, t| x.powf(d) * (t.powf(-(1.0 + d)) + eta)),
        pi_x: Arc::new(move |x, t| d * x.powf(d - 1.0) * (t.powf(-(1.0 + d)) + eta)),
        pi_xtheta: Arc::new(move |x, t| -d * (1.0 + d) * x.powf(d - 1.0) * t.powf(-(2.0 + d))),
        kappa: ScalarField::new(move |x| eta * x.powf(d), move |x| eta * d * x.powf(d - 1.0)),
        lipschitz_delta: d,
        lipschitz_c: (1.0 + d) * LIPSCHITZ_THETA_FLOOR.powf(-(2.0 + d)),
    }
}

fn power_interaction(d: f64) -> InteractionSpec {
    InteractionSpec {
        f: ScalarField::new(move |x| x.powf(d), move |x| d * x.powf(d - 1.0)),
        big_f: ScalarField::new(
            move |y| y.powf(1.0 / d),
            move |y| y.powf(1.0 / d - 1.0) / d,
        ),
        delta: d,
    }
}

fn preset(p: CaseStudyParams, kind: ModelKind, b: ScalarField) -> ProblemSpec {
    let s = p.sigma;
    ProblemSpec {
        diffusion: DiffusionSpec {
            b,
            sigma: ScalarField::new(move |x| s * x, move |_| s),
            growth_exponent: 1.0,
        },
        cost: CostSpec {
            c: ScalarField::constant(p.cost),
            c_lo: p.cost,
            c_hi: p.cost,
        },
        profit: isoelastic_profit(&p),
        interaction: power_interaction(p.delta),
        epsilon: p.epsilon,
        scale: p.kappa,
        tol: Tolerances::default(),
        kind,
        params: Some(p),
    }
}

/// Mean-reverting resource model `dX = α(κ − X)dt + σX dW − dξ` with isoelastic
/// profit `x^δ(θ^{−(1+δ)} + η)` and power-mean interaction.
pub fn build_extraction_model(params: CaseStudyParams) -> Result<ProblemSpec> {
    params.validate()?;
    let (a, k) = (params.alpha, params.kappa);
    let b = ScalarField::new(move |x| a * (k - x), move |_| -a);
    Ok(preset(params, ModelKind::Extraction, b))
}

/// Logistic growth `dX = X(κ − αX)dt + σX dW − dξ` with the same profit and
/// interaction as the extraction model.
pub fn build_logistic_model(params: CaseStudyParams) -> Result<ProblemSpec> {
    params.validate()?;
    let (a, k) = (params.alpha, params.kappa);
    let b = ScalarField::new(move |x| x * (k - a * x), move |x| k - 2.0 * a * x);
    Ok(preset(params, ModelKind::Logistic, b))
}

impl ProblemSpec {
    pub fn b(&self, x: f64) -> f64 {
        self.diffusion.b.eval(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        self.diffusion.sigma.eval(x)
    }

    pub fn sigma2(&self, x: f64) -> f64 {
        let s = self.sigma(x);
        s * s
    }

    pub fn c(&self, x: f64) -> f64 {
        self.cost.c.eval(x)
    }

    pub fn c_x(&self, x: f64) -> f64 {
        self.cost.c.deriv(x)
    }

    pub fn pi(&self, x: f64, theta: f64) -> f64 {
        (self.profit.pi)(x, theta)
    }

    pub fn f(&self, x: f64) -> f64 {
        self.interaction.f.eval(x)
    }

    pub fn big_f(&self, y: f64) -> f64 {
        self.interaction.big_f.eval(y)
    }

    /// Membership band for the gradient constraint.
    pub fn tol_gap(&self) -> f64 {
        1e-8 * (1.0 + self.cost.c_hi)
    }

    /// Default offset used by policy iteration.
    pub fn tol_pia(&self) -> f64 {
        1e-4 * self.cost.c_hi
    }

    /// Landmark function with an arbitrary profit value substituted.
    pub(crate) fn ell_with_profit(&self, x: f64, profit: f64) -> f64 {
        let c = self.c(x);
        -self.b(x) * c + profit - 0.5 * self.sigma2(x) * (self.epsilon * c * c + self.c_x(x))
    }

    /// Derivative of [`Self::ell_with_profit`] given the profit's x-derivative.
    pub(crate) fn ell_x_with_profit(&self, x: f64, profit_x: f64) -> f64 {
        let c = self.c(x);
        let cx = self.c_x(x);
        let cxx = self.cost.c.second_deriv(x);
        let s = self.sigma(x);
        let sx = self.diffusion.sigma.deriv(x);
        let eps = self.epsilon;
        -self.diffusion.b.deriv(x) * c - self.b(x) * cx + profit_x
            - s * sx * (eps * c * c + cx)
            - 0.5 * s * s * (2.0 * eps * c * cx + cxx)
    }

    pub fn ell(&self, x: f64, theta: f64) -> f64 {
        self.ell_with_profit(x, self.pi(x, theta))
    }

    pub fn ell_x(&self, x: f64, theta: f64) -> f64 {
        self.ell_x_with_profit(x, (self.profit.pi_x)(x, theta))
    }

    pub fn ell_robust(&self, x: f64) -> f64 {
        self.ell_with_profit(x, self.profit.kappa.eval(x))
    }

    pub fn ell_robust_x(&self, x: f64) -> f64 {
        self.ell_x_with_profit(x, self.profit.kappa.deriv(x))
    }

    /// The same game with the profit replaced by its large-`theta` limit.
    pub fn robust(&self) -> ProblemSpec {
        let k = self.profit.kappa.clone();
        let k2 = self.profit.kappa.clone();
        let mut out = self.clone();
        out.profit = ProfitSpec {
            pi: Arc::new(move |x, _| k.eval(x)),
            pi_x: Arc::new(move |x, _| k2.deriv(x)),
            pi_xtheta: Arc::new(|_, _| 0.0),
            kappa: self.profit.kappa.clone(),
            lipschitz_delta: self.profit.lipschitz_delta,
            lipschitz_c: 0.0,
        };
        out
    }

    /// Copy with a different ambiguity level.
    pub fn with_epsilon(&self, epsilon: f64) -> ProblemSpec {
        let mut out = self.clone();
        out.epsilon = epsilon;
        if let Some(p) = out.params.as_mut() {
            p.epsilon = epsilon;
        }
        out
    }

    /// Copy with different tolerances.
    pub fn with_tolerances(&self, tol: Tolerances) -> ProblemSpec {
        let mut out = self.clone();
        out.tol = tol;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case() -> ProblemSpec {
        build_extraction_model(CaseStudyParams::default()).unwrap()
    }

    #[test]
    fn extraction_model_values() {
        let s = case();
        assert_eq!(s.b(1.0), 0.0);
        assert_eq!(s.sigma(2.0), 2.0);
        assert!((s.pi(1.0, 1.0) - 2.0).abs() < 1e-15);
        assert!(s.pi(1e-300, 1.0) < 1e-150);
    }

    #[test]
    fn aggregator_inverts_test_function() {
        let p = CaseStudyParams {
            delta: 0.5,
            ..Default::default()
        };
        let s = build_extraction_model(p).unwrap();
        for x in [0.01, 0.7, 3.0, 42.0] {
            assert!((s.big_f(s.f(x)) - x).abs() < 1e-12 * x);
        }
    }

    #[test]
    fn invalid_parameters_are_named() {
        let p = CaseStudyParams {
            delta: 1.2,
            ..Default::default()
        };
        match build_extraction_model(p) {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "delta"),
            other => panic!("unexpected {other:?}"),
        }
        let p = CaseStudyParams {
            sigma: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            build_extraction_model(p),
            Err(Error::InvalidParameter { name: "sigma", .. })
        ));
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        let s = case();
        let fields = [
            &s.diffusion.b,
            &s.diffusion.sigma,
            &s.cost.c,
            &s.profit.kappa,
            &s.interaction.f,
            &s.interaction.big_f,
        ];
        for field in fields {
            for x in [0.05, 0.3, 1.0, 2.5, 7.0] {
                let a = field.deriv(x);
                let n = field.central_difference(x, 1e-5);
                assert!((a - n).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {n} at {x}");
            }
        }
    }

    #[test]
    fn ell_derivative_matches_difference() {
        let s = case();
        for &(x, t) in &[(0.3, 1.0), (1.9, 1.0), (4.0, 0.5), (2.0, 3.0)] {
            let h = 1e-6;
            let n = (s.ell(x + h, t) - s.ell(x - h, t)) / (2.0 * h);
            assert!((s.ell_x(x, t) - n).abs() < 1e-6);
        }
    }
}
