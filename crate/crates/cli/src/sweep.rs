//! Comparative statics of the equilibrium over `ε` or `σ`.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use ergodic_mfg::equilibrium::{find_equilibrium_bisection, EquilibriumOptions};
use ergodic_mfg::ergodic::{stationary_density, StationaryDistribution};
use ergodic_mfg::model::{ProblemConfig, ProblemSpec};
use ergodic_mfg::parallel::{self, Execution};
use ergodic_mfg::shooting::compute_beta;

use crate::format::{num, numeric_rows, write_csv};
use crate::CliError;

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParameter {
    Epsilon,
    Sigma,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::Epsilon => "epsilon",
            SweepParameter::Sigma => "sigma",
        })
    }
}

impl FromStr for SweepParameter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epsilon" => Ok(SweepParameter::Epsilon),
            "sigma" => Ok(SweepParameter::Sigma),
            other => Err(format!("unknown sweep parameter `{other}` (expected epsilon or sigma)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    /// Strictly increasing positive values.
    pub values: Vec<f64>,
    pub base: ProblemConfig,
    pub outputs: PathBuf,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Err(CliError::Usage("sweep needs at least one value".into()));
        }
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(CliError::Usage(format!("sweep values must be positive, got {v}")));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Usage("sweep values must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Problem at one sweep value.
    pub fn spec_at(&self, value: f64) -> Result<ProblemSpec, CliError> {
        let mut cfg = self.base;
        match self.parameter {
            SweepParameter::Epsilon => cfg.params.epsilon = value,
            SweepParameter::Sigma => cfg.params.sigma = value,
        }
        Ok(cfg.build()?)
    }
}

/// Equilibrium at one sweep value, or the reason it could not be computed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub outcome: Result<SweepPoint, String>,
    pub wall_time: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub theta_star: f64,
    pub beta_star: f64,
    pub lambda_star: f64,
    pub iterations: usize,
}

/// Whether a column is nonincreasing over the successful rows; `None` with
/// fewer than two of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Monotonicity {
    pub theta_nonincreasing: Option<bool>,
    pub beta_nonincreasing: Option<bool>,
    /// All rows solved.
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    pub monotonicity: Monotonicity,
    /// Allowed increase between neighbours when judging monotonicity.
    pub tolerance: f64,
}

/// `None` when fewer than two values, else whether no step rises by more
/// than `tol`.
pub fn nonincreasing(values: &[f64], tol: f64) -> Option<bool> {
    (values.len() >= 2).then(|| values.windows(2).all(|w| w[1] <= w[0] + tol))
}

/// Solves the equilibrium by bisection at every sweep value. Failures are kept
/// as rows.
pub fn run_sweep(cfg: &SweepConfig, execution: Execution) -> Result<SweepResult, CliError> {
    cfg.validate()?;
    let base = cfg.base.build()?;
    let tolerance = 10.0 * base.tol.fp.max(base.tol.beta);
    let rows = parallel::map(execution, &cfg.values, |&value| {
        let start = Instant::now();
        let outcome = cfg
            .spec_at(value)
            .and_then(|spec| {
                let opts = EquilibriumOptions {
                    execution: Execution::Sequential,
                    ..EquilibriumOptions::default()
                };
                Ok(find_equilibrium_bisection(&spec, &opts)?)
            })
            .map(|r| SweepPoint {
                theta_star: r.theta_star,
                beta_star: r.beta_star,
                lambda_star: r.lambda_star,
                iterations: r.iterations(),
            })
            .map_err(|e| e.to_string());
        SweepRow {
            value,
            outcome,
            wall_time: start.elapsed(),
        }
    });
    let ok: Vec<SweepPoint> = rows.iter().filter_map(|r| r.outcome.clone().ok()).collect();
    let thetas: Vec<f64> = ok.iter().map(|p| p.theta_star).collect();
    let betas: Vec<f64> = ok.iter().map(|p| p.beta_star).collect();
    let monotonicity = Monotonicity {
        theta_nonincreasing: nonincreasing(&thetas, tolerance),
        beta_nonincreasing: nonincreasing(&betas, tolerance),
        complete: ok.len() == rows.len(),
    };
    Ok(SweepResult {
        parameter: cfg.parameter,
        rows,
        monotonicity,
        tolerance,
    })
}

impl SweepResult {
    /// Rows as CSV. Wall times are left out so that repeated runs produce
    /// identical files.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        let name = self.parameter.to_string();
        let header = [
            name.as_str(),
            "theta_star",
            "beta_star",
            "lambda_star",
            "iterations",
            "failure",
        ];
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| match &r.outcome {
                Ok(p) => vec![
                    num(r.value),
                    num(p.theta_star),
                    num(p.beta_star),
                    num(p.lambda_star),
                    p.iterations.to_string(),
                    String::new(),
                ],
                Err(e) => vec![
                    num(r.value),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ],
            })
            .collect();
        write_csv(out, &header, &rows)
    }

    /// Human-readable summary including wall times.
    pub fn write_summary<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "sweep over {}", self.parameter)?;
        for r in &self.rows {
            match &r.outcome {
                Ok(p) => writeln!(
                    out,
                    "  {} = {}: theta_star = {}, beta_star = {}, lambda_star = {}, iterations = {}, wall_time_s = {}",
                    self.parameter,
                    num(r.value),
                    num(p.theta_star),
                    num(p.beta_star),
                    num(p.lambda_star),
                    p.iterations,
                    num(r.wall_time.as_secs_f64())
                )?,
                Err(e) => writeln!(
                    out,
                    "  {} = {}: failed: {e} (wall_time_s = {})",
                    self.parameter,
                    num(r.value),
                    num(r.wall_time.as_secs_f64())
                )?,
            }
        }
        let m = &self.monotonicity;
        writeln!(out, "theta_star nonincreasing: {}", verdict(m.theta_nonincreasing))?;
        writeln!(out, "beta_star nonincreasing: {}", verdict(m.beta_nonincreasing))?;
        if !m.complete {
            writeln!(out, "note: monotonicity judged on solved rows only")?;
        }
        Ok(())
    }
}

fn verdict(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "yes",
        Some(false) => "no",
        None => "n/a",
    }
}

/// Density mode of the equilibrium at one `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityProfile {
    pub epsilon: f64,
    pub path: PathBuf,
    pub mode: f64,
    /// Trapezoid integral of the emitted density over the emitted grid.
    pub trapezoid_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityProfiles {
    pub profiles: Vec<DensityProfile>,
    /// Rows whose equilibrium was unavailable, with the reason.
    pub skipped: Vec<(f64, String)>,
    /// `None` for fewer than two profiles.
    pub mode_nonincreasing: Option<bool>,
}

/// Writes the equilibrium stationary density for every `ε` of the sweep,
/// solving the sweep first.
pub fn emit_density_profiles(cfg: &SweepConfig, execution: Execution) -> Result<DensityProfiles, CliError> {
    let sweep = run_sweep(cfg, execution)?;
    density_profiles(cfg, &sweep, execution)
}

/// As [`emit_density_profiles`], reusing the equilibria of a finished sweep.
pub fn density_profiles(
    cfg: &SweepConfig,
    sweep: &SweepResult,
    execution: Execution,
) -> Result<DensityProfiles, CliError> {
    if cfg.parameter != SweepParameter::Epsilon {
        return Err(CliError::Usage("density profiles need an epsilon sweep".into()));
    }
    fs::create_dir_all(&cfg.outputs)?;
    let results = parallel::map(execution, &sweep.rows, |row| -> Result<Option<DensityProfile>, CliError> {
        let p = match &row.outcome {
            Ok(p) => *p,
            Err(_) => return Ok(None),
        };
        let spec = cfg.spec_at(row.value)?;
        let fbs = compute_beta(&spec, p.theta_star)?;
        let dist = stationary_density(&spec, &fbs)?;
        let path = cfg.outputs.join(format!("density_epsilon_{}.csv", num(row.value)));
        let (x, m, cdf) = density_table(&dist);
        let mut w = BufWriter::new(File::create(&path)?);
        write_csv(&mut w, &["x", "density", "cdf"], &numeric_rows(&[&x, &m, &cdf]))?;
        w.flush()?;
        Ok(Some(DensityProfile {
            epsilon: row.value,
            path,
            mode: dist.mode(),
            trapezoid_mass: trapezoid(&x, &m),
        }))
    });
    let mut profiles = Vec::new();
    let mut skipped = Vec::new();
    for (row, r) in sweep.rows.iter().zip(results) {
        match r {
            Ok(Some(p)) => profiles.push(p),
            Ok(None) => skipped.push((row.value, row.outcome.clone().err().unwrap_or_default())),
            Err(e) => skipped.push((row.value, e.to_string())),
        }
    }
    let modes: Vec<f64> = profiles.iter().map(|p| p.mode).collect();
    let out = DensityProfiles {
        mode_nonincreasing: nonincreasing(&modes, 0.0),
        profiles,
        skipped,
    };
    let mut w = BufWriter::new(File::create(cfg.outputs.join("density_modes.csv"))?);
    write_csv(
        &mut w,
        &["epsilon", "mode", "trapezoid_mass"],
        &out.profiles
            .iter()
            .map(|p| vec![num(p.epsilon), num(p.mode), num(p.trapezoid_mass)])
            .collect::<Vec<_>>(),
    )?;
    w.flush()?;
    Ok(out)
}

impl DensityProfiles {
    pub fn write_summary<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        for p in &self.profiles {
            writeln!(
                out,
                "  epsilon = {}: mode = {}, trapezoid_mass = {}, file = {}",
                num(p.epsilon),
                num(p.mode),
                num(p.trapezoid_mass),
                p.path.display()
            )?;
        }
        for (v, e) in &self.skipped {
            writeln!(out, "  epsilon = {}: no density ({e})", num(*v))?;
        }
        writeln!(out, "density mode nonincreasing: {}", verdict(self.mode_nonincreasing))
    }
}

/// Subdivisions of each solver cell in emitted density tables.
pub const DENSITY_REFINE: usize = 4;

/// Density and distribution function on the solver grid with every cell split
/// into [`DENSITY_REFINE`] parts, fine enough for trapezoid integration of the
/// emitted table to reproduce the normalization.
pub fn density_table(dist: &StationaryDistribution) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let g = &dist.grid;
    let mut x = Vec::with_capacity((g.len() - 1) * DENSITY_REFINE + 1);
    for w in g.windows(2) {
        for k in 0..DENSITY_REFINE {
            x.push(w[0] + (w[1] - w[0]) * k as f64 / DENSITY_REFINE as f64);
        }
    }
    x.push(*g.last().expect("nonempty grid"));
    let m = x.iter().map(|&t| dist.density_at(t)).collect();
    let cdf = x.iter().map(|&t| dist.cdf_at(t)).collect();
    (x, m, cdf)
}

/// Trapezoid rule on a nonuniform grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Writes the sweep table and its summary under the output directory.
pub fn write_sweep_files(cfg: &SweepConfig, result: &SweepResult) -> Result<(PathBuf, PathBuf), CliError> {
    fs::create_dir_all(&cfg.outputs)?;
    let csv = cfg.outputs.join(format!("sweep_{}.csv", cfg.parameter));
    let summary = cfg.outputs.join(format!("sweep_{}_summary.txt", cfg.parameter));
    write_to(&csv, |w| result.write_csv(w))?;
    write_to(&summary, |w| result.write_summary(w))?;
    Ok((csv, summary))
}

fn write_to(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(values: Vec<f64>) -> SweepConfig {
        SweepConfig {
            parameter: SweepParameter::Epsilon,
            values,
            base: ProblemConfig::default(),
            outputs: PathBuf::from("unused"),
        }
    }

    #[test]
    fn values_must_increase_and_be_positive() {
        assert!(cfg(vec![0.5, 1.0]).validate().is_ok());
        assert!(cfg(vec![]).validate().is_err());
        assert!(cfg(vec![1.0, 1.0]).validate().is_err());
        assert!(cfg(vec![-1.0, 1.0]).validate().is_err());
    }

    #[test]
    fn monotonicity_verdicts() {
        assert_eq!(nonincreasing(&[3.0, 2.0, 2.0], 0.0), Some(true));
        assert_eq!(nonincreasing(&[3.0, 3.05], 0.1), Some(true));
        assert_eq!(nonincreasing(&[3.0, 3.5], 0.1), Some(false));
        assert_eq!(nonincreasing(&[3.0], 0.0), None);
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let x = [0.0, 0.3, 1.0, 2.5];
        let y: Vec<f64> = x.iter().map(|t| 2.0 * t + 1.0).collect();
        assert!((trapezoid(&x, &y) - (2.5 * 2.5 + 2.5)).abs() < 1e-12);
    }

    #[test]
    fn sweep_value_reaches_spec() {
        let c = SweepConfig {
            parameter: SweepParameter::Sigma,
            ..cfg(vec![1.5])
        };
        assert_eq!(c.spec_at(1.5).unwrap().params.unwrap().sigma, 1.5);
    }
}
