mod catalog;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wassercalc_core::constraints::Constraint;
use wassercalc_core::functionals::Functional;
use wassercalc_core::optimality::{self, ResidualOptions, StationarityReport, STATIONARY_TOL};
use wassercalc_core::solvers::{self, DualOptions, GmmOptions};
use wassercalc_core::tangent::{self, Variation, DEFAULT_EPS_GRID};
use wassercalc_core::{transport, DiscreteMeasure};

use error::{CliError, CliResult, EXIT_NOT_STATIONARY};

#[derive(Parser, Debug)]
#[command(name = "wassercalc", version, about = "Calculus and optimization over discrete probability measures in Wasserstein space")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Relative stationarity tolerance, scaled by 1 + ‖g‖.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for multistarts and initialization.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the result JSON here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the support points of the resulting measure as CSV.
    #[arg(long = "csv-out", global = true)]
    csv_out: Option<PathBuf>,
    /// Exit 4 when the stationarity verdict is NotStationary.
    #[arg(long = "assert-stationary", global = true)]
    assert_stationary: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Optimal transport plan between two measures.
    Ot {
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        /// sqeuclidean, euclidean, pnorm:p (optionally behind catalog:).
        #[arg(long, default_value = "sqeuclidean")]
        cost: String,
    },
    /// KKT residual of a functional over a constraint set.
    Residual {
        #[arg(long = "J")]
        j: PathBuf,
        #[arg(long = "C")]
        c: PathBuf,
        #[arg(long)]
        mu: PathBuf,
    },
    /// Unconstrained stationarity residual.
    Fermat {
        #[arg(long = "J")]
        j: PathBuf,
        #[arg(long)]
        mu: PathBuf,
    },
    /// Worst-case mean-variance risk over a W2 ball.
    DroMeanvar {
        /// Comma-separated components.
        #[arg(long, allow_hyphen_values = true)]
        theta: String,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        nuhat: PathBuf,
    },
    /// Proximal step of an expected-value potential.
    Prox {
        #[arg(long = "V")]
        v: String,
        #[arg(long)]
        mu: PathBuf,
        #[arg(long, default_value_t = 8)]
        multistart: usize,
    },
    /// Unit-covariance Gaussian mixture fit.
    GmmFit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long = "max-iter", default_value_t = 5000)]
        max_iter: usize,
    },
    /// Dual of the nonlinear mean-variance DRO problem.
    DroNonlinear {
        #[arg(long = "V")]
        v: String,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        nuhat: PathBuf,
        #[arg(long, default_value_t = 4)]
        multistart: usize,
        #[arg(long, default_value_t = 3)]
        restarts: usize,
    },
    /// Probe whether a variation lies in the tangent cone on a step grid.
    TangentCheck {
        #[arg(long)]
        xi: PathBuf,
        /// Comma-separated step sizes.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ").to_string();
            return report(&CliError { code: "usage".into(), message: first, field: None, exit: error::EXIT_INPUT });
        }
    };
    if let Err(e) = configure_threads() {
        return report(&e);
    }
    // Library code should not panic; if it does, still answer with JSON.
    std::panic::set_hook(Box::new(|_| {}));
    let outcome = std::panic::catch_unwind(|| run(&cli));
    match outcome {
        Ok(Ok(code)) => ExitCode::from(code as u8),
        Ok(Err(e)) => report(&e),
        Err(p) => {
            let message = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "internal error".into());
            report(&CliError { code: "internal".into(), message, field: None, exit: error::EXIT_SOLVER })
        }
    }
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("{}", serde_json::to_string(e).unwrap_or_else(|_| format!("{{\"code\":\"{}\"}}", e.code)));
    ExitCode::from(e.exit as u8)
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("WASSERCALC_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::input("invalid_env", "WASSERCALC_THREADS", format!("WASSERCALC_THREADS must be a nonnegative integer, got {raw:?}"))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input("invalid_env", "WASSERCALC_THREADS", e.to_string()))?;
    }
    Ok(())
}

fn tol(common: &Common) -> CliResult<f64> {
    match common.tol {
        None => Ok(STATIONARY_TOL),
        Some(t) if t.is_finite() && t > 0.0 => Ok(t),
        Some(t) => Err(CliError::input("invalid_parameter", "tol", format!("tol must be positive and finite, got {t}"))),
    }
}

fn finite(field: &str, x: f64) -> CliResult<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::input("non_finite_input", field, format!("{field} must be finite, got {x}")))
    }
}

/// What `--assert-stationary` can judge for a subcommand.
enum Check<'a> {
    NotApplicable,
    /// The solver produced no report (e.g. the residual itself failed).
    Missing,
    Report(&'a StationarityReport),
}

/// Emits the result, the optional CSV, and maps the verdict to an exit code.
fn finish<T: Serialize>(common: &Common, result: &T, support: Option<&DiscreteMeasure>, check: Check) -> CliResult<i32> {
    if common.assert_stationary && matches!(check, Check::NotApplicable) {
        return Err(CliError::input("invalid_parameter", "assert-stationary", "this subcommand reports no stationarity verdict"));
    }
    if common.csv_out.is_some() && support.is_none() {
        return Err(CliError::input("invalid_parameter", "csv-out", "this subcommand has no support points to export"));
    }
    io::write_json(common.out.as_deref(), result)?;
    if let Some(path) = &common.csv_out {
        if let Some(m) = support {
            io::write_measure_csv(path, m)?;
        }
    }
    if common.assert_stationary {
        match check {
            Check::Report(r) if r.is_stationary() => {}
            _ => return Ok(EXIT_NOT_STATIONARY),
        }
    }
    Ok(0)
}

fn run(cli: &Cli) -> CliResult<i32> {
    let common = &cli.common;
    let tol = tol(common)?;
    match &cli.cmd {
        Cmd::Ot { mu, nu, cost } => {
            let cost = catalog::cost("cost", cost)?;
            let mu = io::measure("mu", mu)?;
            let nu = io::measure("nu", nu)?;
            let plan = transport::solve_ot(&mu, &nu, &cost).map_err(CliError::solver)?;
            finish(common, &plan.record(), None, Check::NotApplicable)
        }
        Cmd::Residual { j, c, mu } => {
            let j: Functional = io::spec("J", j)?;
            let c: Constraint = io::spec("C", c)?;
            let mu = io::measure("mu", mu)?;
            let opts = ResidualOptions { tol, ..Default::default() };
            let r = optimality::kkt_residual_with(&j, &c, &mu, &opts).map_err(|e| CliError::core(e, Some("mu")))?;
            finish(common, &r, None, Check::Report(&r))
        }
        Cmd::Fermat { j, mu } => {
            let j: Functional = io::spec("J", j)?;
            let mu = io::measure("mu", mu)?;
            let opts = ResidualOptions { tol, ..Default::default() };
            let r = optimality::fermat_residual_with(&j, &mu, &opts).map_err(|e| CliError::core(e, Some("mu")))?;
            finish(common, &r, None, Check::Report(&r))
        }
        Cmd::DroMeanvar { theta, rho, eps, nuhat } => {
            let theta = catalog::parse_list("theta", theta)?;
            let rho = finite("rho", *rho)?;
            let eps = finite("eps", *eps)?;
            let nu = io::measure("nuhat", nuhat)?;
            let mut s = solvers::solve_meanvar_dro(&theta, rho, eps, &nu).map_err(CliError::solver)?;
            s.stationarity.retolerance(tol);
            finish(common, &s, Some(&s.worst_case), Check::Report(&s.stationarity))
        }
        Cmd::Prox { v, mu, multistart } => {
            let v = catalog::potential("V", v, None)?;
            let mu = io::measure("mu", mu)?;
            let mut s = solvers::prox(&v, &mu, *multistart, common.seed).map_err(CliError::solver)?;
            s.stationarity.retolerance(tol);
            finish(common, &s, Some(&s.mu_star), Check::Report(&s.stationarity))
        }
        Cmd::GmmFit { data, m, max_iter } => {
            let data = io::data("data", data)?;
            let opts = GmmOptions { max_iter: *max_iter, ..GmmOptions::new(*m, common.seed) };
            let mut s = solvers::fit_gaussian_mixture(&data, &opts).map_err(CliError::solver)?;
            s.stationarity.retolerance(tol);
            finish(common, &s, Some(&s.mu_star), Check::Report(&s.stationarity))
        }
        Cmd::DroNonlinear { v, rho, eps, nuhat, multistart, restarts } => {
            let v = catalog::potential("V", v, None)?;
            let rho = finite("rho", *rho)?;
            let eps = finite("eps", *eps)?;
            let nu = io::measure("nuhat", nuhat)?;
            let opts = DualOptions { multistart: *multistart, seed: common.seed, restarts: *restarts };
            let mut s = solvers::solve_nonlinear_dro_dual(&v, rho, eps, &nu, &opts).map_err(CliError::solver)?;
            if let Some(r) = s.stationarity.as_mut() {
                r.retolerance(tol);
            }
            let check = s.stationarity.as_ref().map_or(Check::Missing, Check::Report);
            finish(common, &s, Some(&s.reconstructed_primal), check)
        }
        Cmd::TangentCheck { xi, grid } => {
            let grid = match grid {
                Some(g) => catalog::parse_list("grid", g)?,
                None => DEFAULT_EPS_GRID.to_vec(),
            };
            let xi: Variation = io::spec("xi", xi)?;
            let r = tangent::is_tangent(&xi, &grid).map_err(CliError::solver)?;
            finish(common, &r, None, Check::NotApplicable)
        }
    }
}

