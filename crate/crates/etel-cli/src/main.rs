//! `etel` command-line interface.

mod grid;
mod io;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use etel_core::asymptotics::{
    closed_form_mu, closed_form_quadratic, if2_s, influence_rho, power_approx_s, power_approx_t, sandwich_blocks,
    standardized_point,
};
use etel_core::divergence::{kullback_phi, power_divergence_phi};
use etel_core::estimators::{estimate, sample_mean_init, EstimatorMethod, EstimatorOptions};
use etel_core::model::{evaluate_moments, mean_variance_normal_model, MomentModel, Sample};
use etel_core::montecarlo::{format_f64, power_curve, power_curve_csv, run_experiment_with, ExperimentConfig};
use etel_core::parallel::Execution;
use etel_core::rng::ReplicationRng;
use etel_core::testing::{normal_cdf, run_simple_test, StatisticFamily};
use etel_core::tilting::{solve_multiplier, TiltMethod, DEFAULT_MAX_ITER, DEFAULT_TOL};
use etel_core::Error;

/// Exit status of a failed command.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: 3, message: format!("{}: {e}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ConfigError(_) | Error::InvalidDelta(_) => 2,
            Error::NullInfeasible(_) => 4,
            _ => 3,
        };
        let name = format!("{e:?}");
        let variant = name.split(['(', ' ', '{']).next().unwrap_or_default().to_string();
        Self { code, message: format!("{variant}: {e}") }
    }
}

#[derive(Parser)]
#[command(
    name = "etel",
    version,
    about = "EL, ET and ETEL estimation, empirical phi-divergence tests and power studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    MeanVarianceNormal,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    El,
    Et,
    Etel,
}

impl From<MethodArg> for EstimatorMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::El => EstimatorMethod::EL,
            MethodArg::Et => EstimatorMethod::ET,
            MethodArg::Etel => EstimatorMethod::ETEL,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    T,
    S,
    G2,
}

impl From<FamilyArg> for StatisticFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::T => StatisticFamily::T,
            FamilyArg::S => StatisticFamily::S,
            FamilyArg::G2 => StatisticFamily::G2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PowerFamilyArg {
    T,
    S,
}

#[derive(clap::Args, Serialize)]
struct Common {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json` when `--out` is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate theta from a single-column CSV.
    Estimate {
        /// Single-column CSV; a non-numeric first row is a header.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "mean-variance-normal")]
        model: ModelArg,
        /// Variance offset of the moment model.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Estimator.
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Starting value; the sample mean when omitted.
        #[arg(long, allow_negative_numbers = true)]
        init: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Test the simple null theta = theta0.
    Test {
        /// Single-column CSV; a non-numeric first row is a header.
        #[arg(long)]
        data: PathBuf,
        /// Null value.
        #[arg(long, allow_negative_numbers = true)]
        theta0: f64,
        /// Statistic family.
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Power-divergence order (ignored for g2).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        lambda: f64,
        /// Estimator used by the statistic.
        #[arg(long, value_enum, default_value = "etel")]
        estimator: MethodArg,
        /// Nominal level.
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        alpha: f64,
        /// Variance offset of the moment model.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Approximate power under fixed alternatives.
    Power {
        /// Null value.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        theta0: f64,
        /// `start:stop:step` or a comma separated list.
        #[arg(long, allow_hyphen_values = true)]
        theta_star: String,
        /// Power-divergence order.
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        /// Sample size in the approximation.
        #[arg(long)]
        n: usize,
        /// Nominal level.
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        alpha: f64,
        /// Variance offset of the moment model.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Statistic family.
        #[arg(long, value_enum, default_value = "t")]
        family: PowerFamilyArg,
        /// Use the closed-form expressions (delta = 1, theta0 = 0, family t).
        #[arg(long)]
        closed_form: bool,
        /// Size of the simulated sample used for plug-in expectations.
        #[arg(long, default_value_t = 200_000)]
        plugin_samples: usize,
        /// Seed of the plug-in sample.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte Carlo experiment described by a JSON config.
    Simulate {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Directory for sizes.csv, cdf.csv, estimator_cdf.csv, summary.json and manifest.json.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Worker threads; rayon's default pool when omitted.
        #[arg(long)]
        threads: Option<usize>,
        /// Run replications on the calling thread.
        #[arg(long, conflicts_with = "threads")]
        sequential: bool,
        /// Also write power_curve.csv over this theta* grid.
        #[arg(long, allow_hyphen_values = true)]
        theta_star: Option<String>,
        /// Size of the simulated sample used for plug-in expectations.
        #[arg(long, default_value_t = 200_000)]
        plugin_samples: usize,
    },
    /// Estimating-function and second-order influence values at a point.
    Influence {
        /// Single-column CSV; a non-numeric first row is a header.
        #[arg(long)]
        data: PathBuf,
        /// Null value.
        #[arg(long, allow_negative_numbers = true)]
        theta0: f64,
        /// Evaluation point.
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        /// Variance offset of the moment model.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_delta(delta: f64) -> Result<(), CliError> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(format!("--delta must be finite and > 0, got {delta}")))
    }
}

fn load_sample(path: &Path) -> Result<Sample, CliError> {
    Ok(Sample::from_column(io::read_column(path)?)?)
}

#[derive(Serialize)]
struct EstimateOutput {
    method: EstimatorMethod,
    theta_hat: Vec<f64>,
    t: Vec<f64>,
    objective: f64,
    converged: bool,
    iterations: usize,
}

fn cmd_estimate(
    data: &Path,
    delta: f64,
    method: MethodArg,
    init: Option<f64>,
    common: &Common,
) -> Result<(), CliError> {
    let clock = io::RunClock::start();
    check_delta(delta)?;
    let sample = load_sample(data)?;
    let model = mean_variance_normal_model(delta)?;
    let init = init.map(|v| vec![v]).unwrap_or_else(|| sample_mean_init(&sample, model.p()));
    let est = estimate(method.into(), &model, &sample, &init, &EstimatorOptions::default())?;
    let out = EstimateOutput {
        method: est.method,
        theta_hat: est.theta_hat.clone(),
        t: est.tilt.t.clone(),
        objective: est.objective,
        converged: est.converged,
        iterations: est.outer_iterations,
    };
    let config = json!({
        "data": data, "model": "mean-variance-normal", "delta": delta, "method": method, "init": init,
    });
    io::emit(&clock, "estimate", config, None, &io::to_json(&out)?, common.out.as_deref(), common.manifest.as_deref())
}

#[allow(clippy::too_many_arguments)]
fn cmd_test(
    data: &Path,
    theta0: f64,
    family: FamilyArg,
    lambda: f64,
    estimator: MethodArg,
    alpha: f64,
    delta: f64,
    common: &Common,
) -> Result<(), CliError> {
    let clock = io::RunClock::start();
    check_alpha(alpha)?;
    check_delta(delta)?;
    if !theta0.is_finite() || !lambda.is_finite() {
        return Err(CliError::usage("--theta0 and --lambda must be finite"));
    }
    let sample = load_sample(data)?;
    let model = mean_variance_normal_model(delta)?;
    let f = match family {
        FamilyArg::G2 => kullback_phi(),
        _ => power_divergence_phi(lambda),
    };
    let result = run_simple_test(
        &model,
        &sample,
        &[theta0],
        family.into(),
        &f,
        None,
        estimator.into(),
        alpha,
        &EstimatorOptions::default(),
    )?;
    let config = json!({
        "data": data, "theta0": theta0, "family": family, "lambda": lambda, "estimator": estimator,
        "alpha": alpha, "delta": delta,
    });
    io::emit(&clock, "test", config, None, &io::to_json(&result)?, common.out.as_deref(), common.manifest.as_deref())
}

struct PowerArgs {
    theta0: f64,
    theta_star: String,
    lambda: f64,
    n: usize,
    alpha: f64,
    delta: f64,
    family: PowerFamilyArg,
    closed_form: bool,
    plugin_samples: usize,
    seed: u64,
}

fn cmd_power(a: &PowerArgs, common: &Common) -> Result<(), CliError> {
    let clock = io::RunClock::start();
    check_alpha(a.alpha)?;
    check_delta(a.delta)?;
    let grid = grid::parse_grid(&a.theta_star).map_err(|e| CliError::usage(format!("--theta-star: {e}")))?;
    if a.n == 0 {
        return Err(CliError::usage("--n must be positive"));
    }
    if !a.lambda.is_finite() || !a.theta0.is_finite() {
        return Err(CliError::usage("--lambda and --theta0 must be finite"));
    }
    let mut csv = String::from("theta_star,mu,nu,beta_star,method\n");
    let mut row = |ts: f64, mu: f64, nu: f64, beta: f64, method: &str| {
        csv.push_str(&format!(
            "{},{},{},{},{method}\n",
            format_f64(ts),
            format_f64(mu),
            format_f64(nu),
            format_f64(beta)
        ));
    };
    if a.closed_form {
        if a.delta != 1.0 || a.theta0 != 0.0 || !matches!(a.family, PowerFamilyArg::T) {
            return Err(CliError::usage("--closed-form requires --delta 1, --theta0 0 and --family t"));
        }
        for &ts in &grid {
            let mu = closed_form_mu(a.lambda, ts)?;
            let q = closed_form_quadratic(a.lambda, ts)?;
            let nu = standardized_point(1.0, 1, a.n, a.alpha, mu, q)?;
            row(ts, mu, nu, 1.0 - normal_cdf(nu), "closed_form");
        }
    } else {
        if a.plugin_samples < 3 {
            return Err(CliError::usage("--plugin-samples must be at least 3"));
        }
        let model = mean_variance_normal_model(a.delta)?;
        let f = power_divergence_phi(a.lambda);
        for (k, &ts) in grid.iter().enumerate() {
            let mut rng = ReplicationRng::new(a.seed, k as u64);
            let sd = (ts * ts + a.delta).sqrt();
            let sample = Sample::from_column(rng.normal_vec(a.plugin_samples, ts, sd))?;
            let approx = match a.family {
                PowerFamilyArg::T => power_approx_t(&model, &sample, &[a.theta0], &[ts], &f, a.n, a.alpha)?,
                PowerFamilyArg::S => power_approx_s(&model, &sample, &[a.theta0], &[ts], &f, a.n, a.alpha)?,
            };
            row(ts, approx.mu, approx.nu, approx.beta_star, "plugin");
        }
    }
    let config = json!({
        "theta0": a.theta0, "theta_star": a.theta_star, "grid": grid, "lambda": a.lambda, "n": a.n,
        "alpha": a.alpha, "delta": a.delta, "family": a.family, "closed_form": a.closed_form,
        "plugin_samples": a.plugin_samples,
    });
    let seed = (!a.closed_form).then_some(a.seed);
    io::emit(&clock, "power", config, seed, &csv, common.out.as_deref(), common.manifest.as_deref())
}

fn cmd_simulate(
    config_path: &Path,
    out_dir: &Path,
    threads: Option<usize>,
    sequential: bool,
    theta_star: Option<&str>,
    plugin_samples: usize,
) -> Result<(), CliError> {
    let clock = io::RunClock::start();
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", config_path.display())))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    config.validate()?;
    let grid = theta_star
        .map(|s| grid::parse_grid(s).map_err(|e| CliError::usage(format!("--theta-star: {e}"))))
        .transpose()?;
    let exec = if sequential { Execution::Sequential } else { Execution::from_threads(threads) };
    if threads == Some(0) {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let (_, summary) = run_experiment_with(&config, exec)?;
    let power = match &grid {
        Some(g) => Some(power_curve(&config, g, plugin_samples, exec)?),
        None => None,
    };
    let mut files: Vec<(PathBuf, String)> = vec![
        (out_dir.join("sizes.csv"), summary.sizes_csv()),
        (out_dir.join("cdf.csv"), summary.cdf_csv()),
        (out_dir.join("estimator_cdf.csv"), summary.estimator_cdf_csv()),
        (out_dir.join("summary.json"), io::to_json(&summary)?),
    ];
    if let Some(rows) = &power {
        files.push((out_dir.join("power_curve.csv"), power_curve_csv(rows)));
    }
    for (path, body) in &files {
        io::write_atomic(path, body.as_bytes())?;
    }
    if let Some(w) = &summary.warning {
        eprintln!("warning: {w}");
    }
    let outputs: Vec<PathBuf> = files.iter().map(|(p, _)| p.clone()).collect();
    let mut resolved = serde_json::to_value(&config).map_err(|e| CliError::numerical(e.to_string()))?;
    if let serde_json::Value::Object(m) = &mut resolved {
        m.insert("execution".into(), json!(format!("{exec:?}")));
        m.insert("theta_star".into(), json!(grid));
    }
    let manifest = clock.manifest("simulate", resolved, Some(config.master_seed), &outputs);
    io::write_atomic(&out_dir.join("manifest.json"), io::to_json(&manifest)?.as_bytes())
}

#[derive(Serialize)]
struct InfluenceOutput {
    theta0: f64,
    x: f64,
    g: Vec<f64>,
    rho: serde_json::Map<String, serde_json::Value>,
    if2: f64,
    warnings: Vec<String>,
}

/// `|1 + t'g|` below which the EL estimating function is reported as near its pole.
const EL_POLE_WARN: f64 = 1e-3;

fn cmd_influence(data: &Path, theta0: f64, x: f64, delta: f64, common: &Common) -> Result<(), CliError> {
    let clock = io::RunClock::start();
    check_delta(delta)?;
    if !theta0.is_finite() || !x.is_finite() {
        return Err(CliError::usage("--theta0 and --x must be finite"));
    }
    let sample = load_sample(data)?;
    let model = mean_variance_normal_model(delta)?;
    let mm = evaluate_moments(&model, &sample, &[theta0])?;
    let mut g = vec![0.0; model.r()];
    model.g(&[x], &[theta0], &mut g);
    let mut rho = serde_json::Map::new();
    let mut warnings = Vec::new();
    for method in [EstimatorMethod::EL, EstimatorMethod::ET, EstimatorMethod::ETEL] {
        let tilt = solve_multiplier(method.tilt_method(), &mm, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| match e {
            Error::HullFailure(m) => Error::NullInfeasible(m),
            other => other,
        })?;
        let mean_exp = if method.tilt_method() == TiltMethod::ET {
            mm.rows().map(|gi| gi.iter().zip(&tilt.t).map(|(a, b)| a * b).sum::<f64>().exp()).sum::<f64>()
                / mm.n() as f64
        } else {
            1.0
        };
        if method == EstimatorMethod::EL {
            let d = 1.0 + g.iter().zip(&tilt.t).map(|(a, b)| a * b).sum::<f64>();
            if d.abs() < EL_POLE_WARN {
                warnings.push(format!("EL rho near its pole: 1 + t'g = {d:e}"));
            }
        }
        let value = match influence_rho(method, &model, &[x], &[theta0], &tilt.t, mean_exp) {
            Ok(v) => json!(v),
            Err(e @ Error::PoleEncountered(_)) => {
                warnings.push(format!("{method} rho undefined: {e}"));
                serde_json::Value::Null
            }
            Err(e) => return Err(e.into()),
        };
        rho.insert(method.to_string(), value);
    }
    let blocks = sandwich_blocks(&model, &sample, &[theta0])?;
    let if2 = if2_s(&blocks, &g)?;
    let out = InfluenceOutput { theta0, x, g, rho, if2, warnings };
    let config = json!({ "data": data, "theta0": theta0, "x": x, "delta": delta });
    io::emit(&clock, "influence", config, None, &io::to_json(&out)?, common.out.as_deref(), common.manifest.as_deref())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate { data, model: ModelArg::MeanVarianceNormal, delta, method, init, common } => {
            cmd_estimate(&data, delta, method, init, &common)
        }
        Command::Test { data, theta0, family, lambda, estimator, alpha, delta, common } => {
            cmd_test(&data, theta0, family, lambda, estimator, alpha, delta, &common)
        }
        Command::Power {
            theta0,
            theta_star,
            lambda,
            n,
            alpha,
            delta,
            family,
            closed_form,
            plugin_samples,
            seed,
            common,
        } => cmd_power(
            &PowerArgs { theta0, theta_star, lambda, n, alpha, delta, family, closed_form, plugin_samples, seed },
            &common,
        ),
        Command::Simulate { config, out_dir, threads, sequential, theta_star, plugin_samples } => {
            cmd_simulate(&config, &out_dir, threads, sequential, theta_star.as_deref(), plugin_samples)
        }
        Command::Influence { data, theta0, x, delta, common } => cmd_influence(&data, theta0, x, delta, &common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
