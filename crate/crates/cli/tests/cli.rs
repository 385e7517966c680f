use std::fs;
use std::process::{Command, Output};

fn ergomfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergomfg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn equilibrium_with_case_study_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("casestudy.cfg");
    fs::write(
        &cfg,
        "# case study\nmodel = extraction\nkappa = 1\nalpha = 1\nsigma = 1\neta = 1\ncost = 1\ndelta = 0.6\nepsilon = 1\n",
    )
    .unwrap();
    let trace = dir.path().join("trace.csv");
    let o = ergomfg(&[
        "equilibrium",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    for key in ["theta_star = ", "beta_star = ", "lambda_star = ", "iterations = ", "method = bisection_on_g"] {
        assert!(out.contains(key), "missing {key} in\n{out}");
    }
    let theta: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("theta_star = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((theta - 0.51719).abs() < 1e-4, "{theta}");
    let csv = fs::read_to_string(trace).unwrap();
    assert!(csv.starts_with("iteration,theta,t_theta,beta,residual,aux\n"));
}

#[test]
fn unknown_subcommand_exits_two_with_grammar() {
    let o = ergomfg(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("usage: ergomfg <subcommand>"));
}

#[test]
fn validation_is_advisory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    // A tiny mean-reversion level leaves no interior maximizer of the landmark function.
    fs::write(&cfg, "kappa = 0.01\n").unwrap();
    let o = ergomfg(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("FAIL"), "{out}");
    assert!(out.contains("advisory"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.cfg");
    fs::write(&cfg, "sigmaa = 1\n").unwrap();
    let o = ergomfg(&["consistency", "--theta", "1", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `sigmaa`"));
}

#[test]
fn solver_failure_exits_one() {
    // Far below every landmark: the candidate boundary escapes downward.
    let o = ergomfg(&["solve", "--theta", "1", "--beta", "0.05"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn solve_emits_header_block_and_columns() {
    let o = ergomfg(&["solve", "--theta", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut lines = out.lines();
    for key in ["beta = ", "lambda = ", "bracket_lo = ", "bracket_hi = ", "method = riccati_direct"] {
        assert!(lines.next().unwrap().starts_with(key));
    }
    assert_eq!(lines.next(), Some(""));
    assert_eq!(lines.next(), Some("x,phi,phi_x,V,psi_star"));
    let last: Vec<f64> = out
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    // At the boundary: φ = −c = −1, V = 0, ψ* = εσβ.
    assert_eq!(last[1], -1.0);
    assert_eq!(last[3], 0.0);
    assert!((last[4] - last[0]).abs() < 1e-9);
}

#[test]
fn density_csv_integrates_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let o = ergomfg(&["density", "--theta", "1", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,density,cdf"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let mass: f64 = rows
        .windows(2)
        .map(|w| 0.5 * (w[1][0] - w[0][0]) * (w[0][1] + w[1][1]))
        .sum();
    assert!((mass - 1.0).abs() <= 1e-6, "{mass}");
    assert_eq!(rows.last().unwrap()[2], 1.0);
}

#[test]
fn simulate_writes_path_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let o = ergomfg(&[
        "simulate", "--theta", "1", "--horizon", "20", "--dt", "1e-3", "--burn-in", "2", "--paths", "2", "--x0", "5",
        "--path-out", path.to_str().unwrap(), "--record-points", "100",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("payoff = ") && out.contains(" +/- ") && out.contains("ks_distance = "));
    let text = fs::read_to_string(path).unwrap();
    assert!(text.starts_with("t,x,xi_cum\n0,"));
    assert_eq!(text.lines().count(), 102);
}

#[test]
fn single_value_sweep_has_no_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let o = ergomfg(&[
        "sweep", "--parameter", "epsilon", "--values", "1", "--outputs", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("density mode nonincreasing: n/a"), "{out}");
    assert!(dir.path().join("density_epsilon_1.csv").exists());
    let modes = fs::read_to_string(dir.path().join("density_modes.csv")).unwrap();
    assert_eq!(modes.lines().count(), 2);
}

#[test]
fn invalid_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_ergomfg"))
        .args(["consistency", "--theta", "1"])
        .env("SOLVER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
