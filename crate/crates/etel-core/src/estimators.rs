//! EL, ET and ETEL point estimators built on the inner tilting solvers.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::{kullback_phi, power_divergence_phi};
use crate::error::{Error, Result};
use crate::model::{evaluate_jacobians, evaluate_moments, MomentModel, Sample};
use crate::optim::{bfgs, bracket_minimum, brent, nelder_mead, Minimum};
use crate::tilting::{etel_loglik_at, solve_multiplier, TiltMethod, TiltSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Estimator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorMethod {
    /// Empirical likelihood.
    #[serde(alias = "el")]
    EL,
    /// Exponential tilting.
    #[serde(alias = "et")]
    ET,
    /// Exponentially tilted empirical likelihood.
    #[serde(alias = "etel")]
    ETEL,
}

impl EstimatorMethod {
    /// Weight family of the tilt reported with the estimate.
    pub fn tilt_method(self) -> TiltMethod {
        match self {
            EstimatorMethod::EL => TiltMethod::EL,
            EstimatorMethod::ET | EstimatorMethod::ETEL => TiltMethod::ET,
        }
    }
}

impl fmt::Display for EstimatorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EstimatorMethod::EL => "EL",
            EstimatorMethod::ET => "ET",
            EstimatorMethod::ETEL => "ETEL",
        };
        f.write_str(s)
    }
}

impl FromStr for EstimatorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EL" => Ok(EstimatorMethod::EL),
            "ET" => Ok(EstimatorMethod::ET),
            "ETEL" => Ok(EstimatorMethod::ETEL),
            _ => Err(Error::ConfigError(format!("unknown estimator '{s}' (expected EL, ET or ETEL)"))),
        }
    }
}

/// Tolerances and search mode of the outer optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    /// Inner solver tolerance.
    pub inner_tol: f64,
    /// Inner solver iteration budget.
    pub inner_max_iter: usize,
    /// Outer stopping tolerance on the parameter (sup norm).
    pub outer_tol: f64,
    /// Outer iteration budget.
    pub outer_max_iter: usize,
    /// Use BFGS with analytic criterion gradients.
    pub gradient: bool,
    /// Return a non-converged result instead of `OuterNoConvergence`.
    pub allow_nonconvergence: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            inner_tol: DEFAULT_TOL,
            inner_max_iter: DEFAULT_MAX_ITER,
            outer_tol: 1e-8,
            outer_max_iter: 200,
            gradient: false,
            allow_nonconvergence: false,
        }
    }
}

/// Point estimate with its tilt and search diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    /// Estimator family.
    pub method: EstimatorMethod,
    /// Estimate.
    pub theta_hat: Vec<f64>,
    /// Tilt at the estimate (ET weights for ET and ETEL).
    pub tilt: TiltSolution,
    /// Criterion at the estimate: the minimized divergence for EL and ET, the
    /// maximized log-likelihood for ETEL.
    pub objective: f64,
    /// Outer iterations used.
    pub outer_iterations: usize,
    /// Whether the outer tolerance was met.
    pub converged: bool,
    /// Inner-solver failures met during the search.
    pub failures: usize,
}

/// Method-of-moments start: column means of the sample, truncated to `p` entries.
pub fn sample_mean_init(sample: &Sample, p: usize) -> Vec<f64> {
    (0..p).map(|j| sample.column_mean(j.min(sample.d() - 1))).collect()
}

/// Criterion value and tilt at `theta`.
fn criterion_and_tilt(
    method: EstimatorMethod,
    model: &dyn MomentModel,
    sample: &Sample,
    theta: &[f64],
    opts: &EstimatorOptions,
) -> Result<(f64, TiltSolution, crate::model::MomentMatrix)> {
    let mm = evaluate_moments(model, sample, theta)?;
    let tilt = solve_multiplier(method.tilt_method(), &mm, opts.inner_tol, opts.inner_max_iter)?;
    let n = mm.n() as f64;
    let value = match method {
        EstimatorMethod::EL => -tilt.weights.iter().map(|p| (n * p).ln()).sum::<f64>() / n,
        EstimatorMethod::ET => tilt.weights.iter().map(|p| p * (n * p).ln()).sum(),
        EstimatorMethod::ETEL => etel_loglik_at(&mm, &tilt.t),
    };
    Ok((value, tilt, mm))
}

/// Criterion of `method` at `theta`: `-(1/n) sum log(n p_EL)` for EL,
/// `sum p_ET log(n p_ET)` for ET and the ETEL log-likelihood for ETEL.
pub fn profile_criterion(
    method: EstimatorMethod,
    model: &dyn MomentModel,
    sample: &Sample,
    theta: &[f64],
) -> Result<f64> {
    profile_criterion_with(method, model, sample, theta, &EstimatorOptions::default())
}

/// `profile_criterion` with explicit inner tolerances.
pub fn profile_criterion_with(
    method: EstimatorMethod,
    model: &dyn MomentModel,
    sample: &Sample,
    theta: &[f64],
    opts: &EstimatorOptions,
) -> Result<f64> {
    criterion_and_tilt(method, model, sample, theta, opts).map(|(v, _, _)| v)
}

/// Value to minimize: the criterion, negated for ETEL.
fn minimized(method: EstimatorMethod, value: f64) -> f64 {
    match method {
        EstimatorMethod::ETEL => -value,
        _ => value,
    }
}

/// Gradient of the minimized criterion at `theta`.
fn minimized_gradient(
    method: EstimatorMethod,
    model: &dyn MomentModel,
    sample: &Sample,
    theta: &[f64],
    opts: &EstimatorOptions,
) -> Result<(f64, Vec<f64>)> {
    let (value, tilt, mm) = criterion_and_tilt(method, model, sample, theta, opts)?;
    let grad = match method {
        EstimatorMethod::EL => {
            // Envelope theorem: d/dtheta of (1/n) sum log(1 + t'g_i) at the optimal t.
            let jac = evaluate_jacobians(model, sample, theta)?;
            let p = model.p();
            let r = model.r();
            let mut g = vec![0.0; p];
            for (i, w) in tilt.weights.iter().enumerate() {
                let gi = jac.get(i);
                for k in 0..p {
                    g[k] += w * (0..r).map(|a| gi[a * p + k] * tilt.t[a]).sum::<f64>();
                }
            }
            g
        }
        EstimatorMethod::ET => {
            crate::asymptotics::dphi_u_gradient(&mm, &tilt, model, sample, theta, &power_divergence_phi(-1.0))?.gradient
        }
        EstimatorMethod::ETEL => {
            crate::asymptotics::dphi_u_gradient(&mm, &tilt, model, sample, theta, &kullback_phi())?.gradient
        }
    };
    Ok((minimized(method, value), grad))
}

/// Finds a point with a finite criterion, trying `init` first and then
/// coordinate offsets of growing size.
fn feasible_start<F: FnMut(&[f64]) -> f64>(f: &mut F, init: &[f64], domain: Option<&[(f64, f64)]>) -> Option<Vec<f64>> {
    if f(init).is_finite() {
        return Some(init.to_vec());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for scale in [0.1, 0.3, 1.0, 3.0, 10.0] {
        for k in 0..init.len() {
            for sign in [1.0, -1.0] {
                let mut x = init.to_vec();
                x[k] += sign * scale * init[k].abs().max(1.0);
                if let Some(dom) = domain {
                    x[k] = x[k].clamp(dom[k].0, dom[k].1);
                }
                let v = f(&x);
                if v.is_finite() && best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, x));
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    best.map(|(_, x)| x)
}

/// Shared driver of the three estimators.
pub fn estimate(
    method: EstimatorMethod,
    model: &dyn MomentModel,
    sample: &Sample,
    init: &[f64],
    opts: &EstimatorOptions,
) -> Result<EstimatorResult> {
    let p = model.p();
    if init.len() != p {
        return Err(Error::DimensionMismatch { what: "init", expected: p, found: init.len() });
    }
    if sample.n() > 0 && (1..sample.n()).all(|i| sample.row(i) == sample.row(0)) {
        return Err(Error::SingularMoments("all sample rows are identical".into()));
    }
    let failures = Cell::new(0usize);
    let last_error: Cell<Option<Error>> = Cell::new(None);
    let mut objective = |theta: &[f64]| -> f64 {
        match criterion_and_tilt(method, model, sample, theta, opts) {
            Ok((v, _, _)) => minimized(method, v),
            Err(e) => {
                failures.set(failures.get() + 1);
                last_error.set(Some(e));
                f64::INFINITY
            }
        }
    };
    let domain = model.param_domain();
    let Some(start) = feasible_start(&mut objective, init, domain) else {
        return match last_error.take() {
            Some(e @ Error::SingularMoments(_)) => Err(e),
            _ => Err(Error::AllStartsFailed),
        };
    };

    let step: Vec<f64> = start.iter().map(|x| 0.1 * x.abs().max(1.0)).collect();
    let mut search: Option<Minimum> = None;
    if opts.gradient {
        let mut fg = |theta: &[f64]| minimized_gradient(method, model, sample, theta, opts).ok();
        search = bfgs(&mut fg, &start, opts.outer_tol, opts.outer_max_iter).filter(|m| m.converged);
    }
    let found = match search {
        Some(m) => m,
        None if p == 1 => {
            let (lo, hi) = domain.map_or((f64::NEG_INFINITY, f64::INFINITY), |d| d[0]);
            let mut f1 = |x: f64| objective(&[x]);
            let ((a, b, c), _) = bracket_minimum(&mut f1, start[0], step[0], lo, hi);
            brent(&mut f1, a, b, c, 0.5 * opts.outer_tol, opts.outer_max_iter)
        }
        None => {
            let first = nelder_mead(&mut objective, &start, &step, opts.outer_tol, opts.outer_max_iter);
            let restart_step: Vec<f64> = first.x.iter().map(|x| 0.01 * x.abs().max(1.0)).collect();
            let second = nelder_mead(&mut objective, &first.x, &restart_step, opts.outer_tol, opts.outer_max_iter);
            let best = if second.value <= first.value { second.clone() } else { first.clone() };
            Minimum { iterations: first.iterations + second.iterations, converged: second.converged, ..best }
        }
    };
    if !found.converged && !opts.allow_nonconvergence {
        return Err(Error::OuterNoConvergence { iterations: found.iterations });
    }
    let (value, tilt, _) = criterion_and_tilt(method, model, sample, &found.x, opts)?;
    Ok(EstimatorResult {
        method,
        theta_hat: found.x,
        tilt,
        objective: value,
        outer_iterations: found.iterations,
        converged: found.converged,
        failures: failures.get(),
    })
}

/// EL estimator: minimizes `-(1/n) sum log(n p_EL,i(theta))`.
pub fn estimate_el(
    model: &dyn MomentModel,
    sample: &Sample,
    init: &[f64],
    opts: &EstimatorOptions,
) -> Result<EstimatorResult> {
    estimate(EstimatorMethod::EL, model, sample, init, opts)
}

/// ET estimator: minimizes `sum p_ET,i log(n p_ET,i)`.
pub fn estimate_et(
    model: &dyn MomentModel,
    sample: &Sample,
    init: &[f64],
    opts: &EstimatorOptions,
) -> Result<EstimatorResult> {
    estimate(EstimatorMethod::ET, model, sample, init, opts)
}

/// ETEL estimator: maximizes the ETEL profile log-likelihood.
pub fn estimate_etel(
    model: &dyn MomentModel,
    sample: &Sample,
    init: &[f64],
    opts: &EstimatorOptions,
) -> Result<EstimatorResult> {
    estimate(EstimatorMethod::ETEL, model, sample, init, opts)
}
