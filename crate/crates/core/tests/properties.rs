use proptest::prelude::*;

use std::sync::OnceLock;

use ergodic_mfg::equilibrium::{resolve_bracket, ThetaBracket};
use ergodic_mfg::ergodic::{consistency_eval, consistency_map, stationary_density};
use ergodic_mfg::model::{
    build_extraction_model, eval_ell, eval_ell_robust, find_landmarks, CaseStudyParams, ModelKind,
    ProblemConfig, ProblemSpec,
};
use ergodic_mfg::montecarlo::{simulate_reflected, McConfig};
use ergodic_mfg::numerics::roots::linspace;
use ergodic_mfg::parallel::Execution;
use ergodic_mfg::shooting::{compute_beta, in_b, solve_bvp, BvpSolution, GridConfig};
use ergodic_mfg::Error;

fn case() -> ProblemSpec {
    build_extraction_model(CaseStudyParams::default()).unwrap()
}

fn bvp_or_partial(s: &ProblemSpec, beta: f64, theta: f64, cfg: &GridConfig) -> BvpSolution {
    match solve_bvp(s, beta, 0.0, theta, cfg) {
        Ok(b) => b,
        Err(Error::BlowUp { partial, .. }) => *partial,
        Err(e) => panic!("{e}"),
    }
}

/// Largest `lower(x) − upper(x)` over the common range.
fn excess(lower: &BvpSolution, upper: &BvpSolution) -> f64 {
    let lo = lower.grid[0].max(upper.grid[0]);
    let hi = lower.beta.min(upper.beta);
    let (a, b) = (lower.interpolant(), upper.interpolant());
    linspace(lo, hi, 300)
        .into_iter()
        .map(|x| a.eval(x) - b.eval(x))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn case_bracket() -> &'static ThetaBracket {
    static BRACKET: OnceLock<ThetaBracket> = OnceLock::new();
    BRACKET.get_or_init(|| resolve_bracket(&case(), None).unwrap())
}

fn slow() -> ProptestConfig {
    ProptestConfig::with_cases(12)
}

proptest! {
    #![proptest_config(slow())]

    #[test]
    fn admissible_set_is_an_up_set(theta in 0.3f64..3.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let s = case();
        let lm = find_landmarks(&s, theta).unwrap();
        let (lo, hi) = (u.min(v), u.max(v));
        let at = |w: f64| lm.xhat + w * (1.5 * lm.xhat_lower - lm.xhat);
        let a = in_b(&s, at(lo), theta).unwrap();
        let b = in_b(&s, at(hi), theta).unwrap();
        prop_assert!(!a.member || b.member, "member at {} but not at {}", at(lo), at(hi));
    }

    #[test]
    fn slope_increases_with_beta(theta in 0.3f64..3.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let s = case();
        let lm = find_landmarks(&s, theta).unwrap();
        let cfg = GridConfig::with_x_lo(0.25 * lm.xhat);
        let at = |w: f64| lm.xhat + w * (lm.xhat_lower - lm.xhat);
        let (a, b) = (at(u.min(v)), at(u.max(v)));
        prop_assume!(b - a > 1e-6);
        let e = excess(&bvp_or_partial(&s, a, theta, &cfg), &bvp_or_partial(&s, b, theta, &cfg));
        prop_assert!(e <= 1e-8, "excess {e}");
    }

    #[test]
    fn slope_increases_with_theta(t1 in 0.3f64..3.0, t2 in 0.3f64..3.0) {
        let s = case();
        let beta = compute_beta(&s, 1.0).unwrap().beta_star;
        let cfg = GridConfig::with_x_lo(0.25 * beta);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let e = excess(&bvp_or_partial(&s, beta, lo, &cfg), &bvp_or_partial(&s, beta, hi, &cfg));
        prop_assert!(e <= 1e-8, "excess {e}");
    }

    // The robust solution bounds the slope from above, as in the proof of the
    // robust lower bound on the free boundary.
    #[test]
    fn robust_slope_is_an_upper_envelope(theta in 0.3f64..3.0) {
        let s = case();
        let beta = compute_beta(&s, theta).unwrap().beta_star;
        let cfg = GridConfig::with_x_lo(0.25 * beta);
        let e = excess(&bvp_or_partial(&s, beta, theta, &cfg), &bvp_or_partial(&s.robust(), beta, theta, &cfg));
        prop_assert!(e <= 1e-8, "excess {e}");
    }

    #[test]
    fn robust_slope_is_a_lower_envelope(theta in 0.3f64..3.0) {
        let s = case();
        let beta = compute_beta(&s, theta).unwrap().beta_star;
        let cfg = GridConfig::with_x_lo(0.25 * beta);
        let e = excess(&bvp_or_partial(&s.robust(), beta, theta, &cfg), &bvp_or_partial(&s, beta, theta, &cfg));
        prop_assert!(e <= 1e-8, "excess {e}");
    }

    #[test]
    fn free_boundary_invariants(theta in 0.3f64..3.0) {
        let s = case();
        let fbs = compute_beta(&s, theta).unwrap();
        prop_assert_eq!(fbs.lambda, s.ell(fbs.beta_star, theta));
        prop_assert!(fbs.bracket.0 <= fbs.beta_star && fbs.beta_star <= fbs.bracket.1);
        let tol_gap = s.tol_gap();
        for (&x, &p) in fbs.grid().iter().zip(fbs.v_x()) {
            prop_assert!(p >= -s.c(x) - tol_gap, "gradient constraint at {x}: {p}");
        }
        let max_phi = fbs.v_x().iter().map(|p| p.abs()).fold(0.0, f64::max);
        prop_assert!(max_phi <= fbs.slope_bound * (1.0 + 1e-9), "{max_phi} > {}", fbs.slope_bound);
        prop_assert!((fbs.v_x().last().unwrap() + s.c(fbs.beta_star)).abs() <= 1e-12);
        prop_assert!(fbs.smooth_fit_residual(&s) <= 1e-6 * (1.0 + fbs.lambda.abs()));
    }

    #[test]
    fn stationary_law_is_a_distribution(theta in 0.3f64..3.0) {
        let s = case();
        let fbs = compute_beta(&s, theta).unwrap();
        let d = stationary_density(&s, &fbs).unwrap();
        prop_assert!(d.density.iter().all(|&m| m >= 0.0 && m.is_finite()));
        prop_assert!(d.cdf.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((d.cdf.last().unwrap() - 1.0).abs() <= 1e-8);
        prop_assert_eq!(d.cdf_at(2.0 * fbs.beta_star), 1.0);
        prop_assert_eq!(d.density_at(1.5 * fbs.beta_star), 0.0);
        prop_assert!(d.stationarity_residual(&s, &fbs) <= 1e-6);
    }

    #[test]
    fn consistency_value_is_below_boundary_level(theta in 0.3f64..3.0) {
        let s = case();
        let e = consistency_eval(&s, theta).unwrap();
        prop_assert!(e.value > 0.0);
        prop_assert!(e.value <= s.big_f(s.f(e.beta)) * (1.0 + 1e-12));
    }

    #[test]
    fn consistency_map_is_nonincreasing(u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let s = case();
        let br = case_bracket();
        let at = |w: f64| br.lo + w * (br.hi - br.lo);
        let (t1, t2) = (at(u.min(v)), at(u.max(v)));
        let (a, b) = (consistency_map(&s, t1).unwrap(), consistency_map(&s, t2).unwrap());
        prop_assert!(a >= b - s.tol.fp, "T({t1}) = {a} < T({t2}) = {b}");
    }

    #[test]
    fn consistency_map_preserves_bracket(u in 0.0f64..1.0) {
        let s = case();
        let br = case_bracket();
        let theta = br.lo + u * (br.hi - br.lo);
        let t = consistency_map(&s, theta).unwrap();
        prop_assert!(t >= br.lo - s.tol.fp && t <= br.hi + s.tol.fp, "T({theta}) = {t} outside [{}, {}]", br.lo, br.hi);
    }

    #[test]
    fn simulated_state_stays_in_range(seed in any::<u64>()) {
        let s = case();
        let fbs = compute_beta(&s, 1.0).unwrap();
        let cfg = McConfig {
            horizon: 5.0,
            burn_in: 0.5,
            n_paths: 2,
            seed,
            x0: 3.0 * fbs.beta_star,
            execution: Execution::Sequential,
            ..McConfig::default()
        };
        let e = simulate_reflected(&s, &fbs, &cfg).unwrap();
        prop_assert!(e.max_state <= fbs.beta_star + 1e-12);
        prop_assert!(e.min_state > 0.0);
        prop_assert!((e.initial_jump - 2.0 * fbs.beta_star).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn landmark_function_peaks_at_maximizer(theta in 0.3f64..3.0) {
        let s = case();
        let lm = find_landmarks(&s, theta).unwrap();
        let h = 10.0 * s.tol.root;
        let top = eval_ell(&s, lm.xhat, theta);
        prop_assert!(eval_ell(&s, lm.xhat - h, theta) < top, "left of {}", lm.xhat);
        prop_assert!(eval_ell(&s, lm.xhat + h, theta) < top, "right of {}", lm.xhat);
    }

    #[test]
    fn robust_landmark_function_is_a_lower_bound(theta in 0.05f64..20.0, x in 1e-4f64..20.0) {
        let s = case();
        prop_assert!(eval_ell_robust(&s, x) <= eval_ell(&s, x, theta));
    }

    #[test]
    fn landmark_function_decreases_in_theta(x in 1e-4f64..20.0, t1 in 0.05f64..20.0, t2 in 0.05f64..20.0) {
        let s = case();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        prop_assert!(eval_ell(&s, x, lo) >= eval_ell(&s, x, hi));
    }

    #[test]
    fn maximizer_decreases_in_epsilon(theta in 0.3f64..3.0, e1 in 0.1f64..5.0, e2 in 0.1f64..5.0) {
        let at = |epsilon: f64| {
            let s = build_extraction_model(CaseStudyParams { epsilon, ..CaseStudyParams::default() }).unwrap();
            find_landmarks(&s, theta).unwrap().xhat
        };
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let tol = 10.0 * case().tol.root;
        prop_assert!(at(hi) <= at(lo) + tol, "xhat({hi}) = {} > xhat({lo}) = {}", at(hi), at(lo));
    }

    #[test]
    fn inverse_interaction_undoes_interaction(x in 1e-6f64..1e3) {
        let s = case();
        let y = s.big_f(s.f(x));
        prop_assert!((y - x).abs() <= 1e-12 * x.max(1.0), "{y} vs {x}");
    }

    #[test]
    fn config_text_round_trips(
        kappa in 0.1f64..5.0,
        sigma in 0.1f64..3.0,
        eta in 0.1f64..3.0,
        delta in 0.05f64..0.95,
        epsilon in 0.01f64..5.0,
    ) {
        let text = format!(
            "model = extraction\nkappa = {kappa}\nsigma = {sigma}\neta = {eta}\ndelta = {delta}\nepsilon = {epsilon}\n"
        );
        let cfg = ProblemConfig::parse(&text).unwrap();
        prop_assert_eq!(cfg.model, ModelKind::Extraction);
        prop_assert_eq!(cfg.params.kappa, kappa);
        prop_assert_eq!(cfg.params.sigma, sigma);
        prop_assert_eq!(cfg.params.eta, eta);
        prop_assert_eq!(cfg.params.delta, delta);
        prop_assert_eq!(cfg.params.epsilon, epsilon);
    }

    #[test]
    fn unknown_config_keys_are_rejected(key in "[a-z]{3,10}") {
        prop_assume!(!["model", "kappa", "alpha", "sigma", "eta", "cost", "delta", "epsilon", "x_min_rel", "tol_root"]
            .contains(&key.as_str()));
        let parsed = ProblemConfig::parse(&format!("{key} = 1\n"));
        prop_assert!(matches!(parsed, Err(Error::Config { line: 1, .. })), "{parsed:?}");
    }
}
