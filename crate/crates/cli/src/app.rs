//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};

use ergodic_mfg::equilibrium::{
    find_equilibrium_bisection, find_equilibrium_damped, policy_iteration, EquilibriumOptions,
    EquilibriumResult,
};
use ergodic_mfg::ergodic::{consistency_eval, stationary_density};
use ergodic_mfg::model::{default_grids, find_landmarks, validate_assumptions, ProblemConfig, ProblemSpec};
use ergodic_mfg::montecarlo::{simulate_reflected, McConfig};
use ergodic_mfg::numerics::interp::hermite_tail_integrals;
use ergodic_mfg::parallel::Execution;
use ergodic_mfg::shooting::{compute_beta, solve_bvp, GridConfig};

use crate::format::{num, numeric_rows, write_csv};
use crate::sweep::{density_profiles, density_table, run_sweep, write_sweep_files, SweepConfig, SweepParameter};
use crate::CliError;

/// Command grammar printed with usage errors.
pub const GRAMMAR: &str = "\
usage: ergomfg <subcommand> [--config PATH] [flags]

subcommands:
  validate
  solve        --theta <v> [--gamma <v>] [--beta <v>] [--out PATH]
  density      --theta <v> [--out PATH]
  consistency  --theta <v>
  equilibrium  [--method bisect|damped|pia] [--rho <v>] [--tol-fp <v>]
               [--bracket-lo <v> --bracket-hi <v>] [--out PATH]
  simulate     --theta <v> [--horizon <v>] [--dt <v>] [--paths <n>] [--seed <n>]
               [--burn-in <v>] [--x0 <v>] [--path-out PATH] [--record-points <n>]
  sweep        --parameter epsilon|sigma --values <v,v,...> --outputs DIR

environment:
  SOLVER_THREADS  upper bound on worker threads (default: number of cores)
";

#[derive(Parser, Debug)]
#[command(name = "ergomfg", version, about = "Stationary equilibria of ergodic singular-control games under ambiguity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Problem configuration file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions on sample grids (advisory).
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the boundary-value problem at the free boundary or a given beta.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: f64,
        /// Perturbation of the right-hand side; needs --beta.
        #[arg(long, requires = "beta")]
        gamma: Option<f64>,
        /// Candidate boundary; default the free boundary.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Stationary density of the reflected worst-case state.
    Density {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: f64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Evaluate the consistency map.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: f64,
    },
    /// Find the mean-field equilibrium.
    Equilibrium {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Bisect)]
        method: MethodArg,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long = "tol-fp")]
        tol_fp: Option<f64>,
        #[arg(long = "bracket-lo", requires = "bracket_hi")]
        bracket_lo: Option<f64>,
        #[arg(long = "bracket-hi", requires = "bracket_lo")]
        bracket_hi: Option<f64>,
        /// Trace CSV destination; default standard output.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of the reflected worst-case dynamics.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 1e4)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 8)]
        paths: usize,
        #[arg(long, default_value_t = McConfig::default().seed)]
        seed: u64,
        #[arg(long = "burn-in", default_value_t = 100.0)]
        burn_in: f64,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        /// CSV of the first path.
        #[arg(long = "path-out", value_name = "PATH")]
        path_out: Option<PathBuf>,
        #[arg(long = "record-points", default_value_t = 1000)]
        record_points: usize,
    },
    /// Equilibria over a range of epsilon or sigma.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        parameter: SweepParameter,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
        #[arg(long, value_name = "DIR")]
        outputs: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Bisect,
    Damped,
    Pia,
}

impl clap::builder::ValueParserFactory for SweepParameter {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<SweepParameter>())
    }
}

/// Runs the tool on `args` (including the program name) and returns the exit
/// code: 0 on success, 1 on solver or I/O errors, 2 on usage errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}\n{GRAMMAR}", e.render());
                    2
                }
            };
        }
    };
    let result = execution_from_env().and_then(|exec| dispatch(cli.command, exec, out));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(err, "error: {e}");
            if code == 2 {
                let _ = write!(err, "\n{GRAMMAR}");
            }
            code
        }
    }
}

/// Reads `SOLVER_THREADS` and sizes the worker pool accordingly.
fn execution_from_env() -> Result<Execution, CliError> {
    let threads = match std::env::var("SOLVER_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Usage(format!("SOLVER_THREADS must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        // The global pool can be sized once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(match threads {
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    })
}

fn load_config(common: &Common) -> Result<ProblemConfig, CliError> {
    match &common.config {
        None => Ok(ProblemConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            Ok(ProblemConfig::parse(&text)?)
        }
    }
}

fn load_spec(common: &Common) -> Result<ProblemSpec, CliError> {
    Ok(load_config(common)?.build()?)
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be finite and > 0, got {v}")))
    }
}

/// Writes CSV to `path`, or to `out` after a blank line when no path is given.
fn emit_csv(
    out: &mut dyn Write,
    path: Option<&Path>,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write_csv(&mut w, header, rows)?;
            w.flush()?;
            writeln!(out, "csv = {}", p.display())?;
        }
        None => {
            writeln!(out)?;
            write_csv(out, header, rows)?;
        }
    }
    Ok(())
}

fn dispatch(cmd: Command, exec: Execution, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Validate { common } => {
            let spec = load_spec(&common)?;
            let (thetas, xs) = default_grids();
            let report = validate_assumptions(&spec, &thetas, &xs);
            write!(out, "{report}")?;
            writeln!(
                out,
                "assumptions {}",
                if report.all_passed() { "hold on the sample grids" } else { "fail on the sample grids (advisory)" }
            )?;
        }
        Command::Solve {
            common,
            theta,
            gamma,
            beta,
            out: path,
        } => {
            positive("theta", theta)?;
            let spec = load_spec(&common)?;
            let (sol, lambda, bracket, grid, phi, phi_x, v, psi) = match beta {
                None => {
                    let fbs = compute_beta(&spec, theta)?;
                    (
                        fbs.bvp.method,
                        fbs.lambda,
                        fbs.bracket,
                        fbs.bvp.grid.clone(),
                        fbs.bvp.phi.clone(),
                        fbs.bvp.phi_x.clone(),
                        fbs.v.clone(),
                        fbs.psi_star.clone(),
                    )
                }
                Some(b) => {
                    positive("beta", b)?;
                    let g = gamma.unwrap_or(0.0);
                    let lm = find_landmarks(&spec, theta)?;
                    let bvp = solve_bvp(&spec, b, g, theta, &GridConfig::default())?;
                    let v: Vec<f64> = hermite_tail_integrals(&bvp.grid, &bvp.phi, &bvp.phi_x)
                        .iter()
                        .map(|t| -t)
                        .collect();
                    let psi = bvp
                        .grid
                        .iter()
                        .zip(&bvp.phi)
                        .map(|(&x, &p)| -spec.epsilon * spec.sigma(x) * p)
                        .collect();
                    (
                        bvp.method,
                        spec.ell(b, theta) + g,
                        (lm.xhat, lm.xhat_lower),
                        bvp.grid,
                        bvp.phi,
                        bvp.phi_x,
                        v,
                        psi,
                    )
                }
            };
            writeln!(out, "beta = {}", num(*grid.last().expect("nonempty grid")))?;
            writeln!(out, "lambda = {}", num(lambda))?;
            writeln!(out, "bracket_lo = {}", num(bracket.0))?;
            writeln!(out, "bracket_hi = {}", num(bracket.1))?;
            writeln!(out, "method = {sol}")?;
            emit_csv(
                out,
                path.as_deref(),
                &["x", "phi", "phi_x", "V", "psi_star"],
                &numeric_rows(&[&grid, &phi, &phi_x, &v, &psi]),
            )?;
        }
        Command::Density { common, theta, out: path } => {
            positive("theta", theta)?;
            let spec = load_spec(&common)?;
            let fbs = compute_beta(&spec, theta)?;
            let dist = stationary_density(&spec, &fbs)?;
            writeln!(out, "theta = {}", num(theta))?;
            writeln!(out, "beta = {}", num(fbs.beta_star))?;
            writeln!(out, "mode = {}", num(dist.mode()))?;
            writeln!(out, "truncated_mass = {}", num(dist.truncated_mass))?;
            let (x, m, cdf) = density_table(&dist);
            emit_csv(out, path.as_deref(), &["x", "density", "cdf"], &numeric_rows(&[&x, &m, &cdf]))?;
        }
        Command::Consistency { common, theta } => {
            positive("theta", theta)?;
            let spec = load_spec(&common)?;
            let e = consistency_eval(&spec, theta)?;
            writeln!(out, "T(theta) = {}", num(e.value))?;
        }
        Command::Equilibrium {
            common,
            method,
            rho,
            tol_fp,
            bracket_lo,
            bracket_hi,
            out: path,
        } => {
            let mut spec = load_spec(&common)?;
            if let Some(t) = tol_fp {
                positive("tol-fp", t)?;
                spec.tol.fp = t;
            }
            let opts = EquilibriumOptions {
                bracket: bracket_lo.zip(bracket_hi),
                rho,
                execution: exec,
                ..EquilibriumOptions::default()
            };
            let r = match method {
                MethodArg::Bisect => find_equilibrium_bisection(&spec, &opts)?,
                MethodArg::Damped => find_equilibrium_damped(&spec, &opts)?,
                MethodArg::Pia => policy_iteration(&spec, &opts)?,
            };
            write_equilibrium(out, &r, path.as_deref())?;
        }
        Command::Simulate {
            common,
            theta,
            horizon,
            dt,
            paths,
            seed,
            burn_in,
            x0,
            path_out,
            record_points,
        } => {
            positive("theta", theta)?;
            let spec = load_spec(&common)?;
            let cfg = McConfig {
                dt,
                horizon,
                burn_in,
                n_paths: paths,
                seed,
                x0,
                record_points: if path_out.is_some() { record_points } else { 0 },
                execution: exec,
                ..McConfig::default()
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let fbs = compute_beta(&spec, theta)?;
            let est = simulate_reflected(&spec, &fbs, &cfg)?;
            writeln!(out, "theta = {}", num(theta))?;
            writeln!(out, "beta = {}", num(fbs.beta_star))?;
            writeln!(out, "lambda = {}", num(fbs.lambda))?;
            writeln!(out, "payoff = {} +/- {}", num(est.ergodic_payoff), num(est.payoff_se))?;
            writeln!(out, "moment = {} +/- {}", num(est.moment_f), num(est.moment_se))?;
            match est.ks_distance_vs_analytic {
                Some(ks) => writeln!(out, "ks_distance = {}", num(ks))?,
                None => writeln!(out, "ks_distance = n/a")?,
            }
            writeln!(out, "control_rate = {}", num(est.control_rate))?;
            writeln!(out, "resample_rate = {}", num(est.resample_rate))?;
            if est.resample_flagged {
                writeln!(out, "warning: resample rate above threshold; reduce dt")?;
            }
            if let Some(p) = path_out {
                let t: Vec<f64> = est.first_path.iter().map(|q| q.t).collect();
                let x: Vec<f64> = est.first_path.iter().map(|q| q.x).collect();
                let xi: Vec<f64> = est.first_path.iter().map(|q| q.xi_cum).collect();
                emit_csv(out, Some(&p), &["t", "x", "xi_cum"], &numeric_rows(&[&t, &x, &xi]))?;
            }
        }
        Command::Sweep {
            common,
            parameter,
            values,
            outputs,
        } => {
            let cfg = SweepConfig {
                parameter,
                values,
                base: load_config(&common)?,
                outputs,
            };
            let result = run_sweep(&cfg, exec)?;
            let (csv, summary) = write_sweep_files(&cfg, &result)?;
            result.write_summary(out)?;
            writeln!(out, "csv = {}", csv.display())?;
            writeln!(out, "summary = {}", summary.display())?;
            if parameter == SweepParameter::Epsilon {
                let d = density_profiles(&cfg, &result, exec)?;
                d.write_summary(out)?;
            }
        }
    }
    Ok(())
}

fn write_equilibrium(out: &mut dyn Write, r: &EquilibriumResult, path: Option<&Path>) -> Result<(), CliError> {
    writeln!(out, "theta_star = {}", num(r.theta_star))?;
    writeln!(out, "beta_star = {}", num(r.beta_star))?;
    writeln!(out, "lambda_star = {}", num(r.lambda_star))?;
    writeln!(out, "iterations = {}", r.iterations())?;
    writeln!(out, "method = {}", r.method)?;
    writeln!(out, "residual = {}", num(r.residual))?;
    writeln!(out, "bracket = [{}, {}]", num(r.bracket.0), num(r.bracket.1))?;
    for n in &r.notes {
        writeln!(out, "note: {n}")?;
    }
    let rows: Vec<Vec<String>> = r
        .trace
        .iter()
        .map(|t| {
            vec![
                t.iteration.to_string(),
                num(t.theta),
                num(t.t_theta),
                num(t.beta),
                num(t.residual),
                num(t.aux),
            ]
        })
        .collect();
    emit_csv(
        out,
        path,
        &["iteration", "theta", "t_theta", "beta", "residual", "aux"],
        &rows,
    )
}
