//! Empirical phi-divergence statistics `T`, `S`, the likelihood ratio `G2`, their
//! (h, phi) variants, p-values and reject decisions for simple null hypotheses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crate::distributions::{chi2_cdf, chi2_quantile, chi2_sf, noncentral_chi2_cdf, noncentral_chi2_sf, normal_cdf};
use crate::divergence::{d_phi, HFunction, PhiFunction};
use crate::error::{Error, Result};
use crate::estimators::{estimate, sample_mean_init, EstimatorMethod, EstimatorOptions, EstimatorResult};
use crate::model::{evaluate_moments, MomentModel, Sample};
use crate::tilting::{solve_multiplier, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Statistic family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StatisticFamily {
    /// `(2n/phi''(1)) (D(u, p0) - D(u, p_hat))`.
    T,
    /// `(2n/phi''(1)) D(p_hat, p0)`.
    S,
    /// `2 sum log p_hat - 2 sum log p0`.
    G2,
    /// `T` with an `h` wrapper.
    #[serde(rename = "T_h")]
    TH,
    /// `S` with an `h` wrapper.
    #[serde(rename = "S_h")]
    SH,
}

impl fmt::Display for StatisticFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StatisticFamily::T => "T",
            StatisticFamily::S => "S",
            StatisticFamily::G2 => "G2",
            StatisticFamily::TH => "T_h",
            StatisticFamily::SH => "S_h",
        };
        f.write_str(s)
    }
}

impl FromStr for StatisticFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T" => Ok(StatisticFamily::T),
            "S" => Ok(StatisticFamily::S),
            "G2" => Ok(StatisticFamily::G2),
            "T_H" | "TH" => Ok(StatisticFamily::TH),
            "S_H" | "SH" => Ok(StatisticFamily::SH),
            _ => Err(Error::ConfigError(format!("unknown statistic family '{s}'"))),
        }
    }
}

/// Outcome of a simple-null test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    /// Statistic value.
    pub statistic: f64,
    /// Degrees of freedom, the parameter dimension.
    pub df: usize,
    /// `P(chi2_df > statistic)`, or 1 for negative statistics.
    pub p_value: f64,
    /// `chi2_{df, alpha}`.
    pub critical_value: f64,
    /// Level.
    pub alpha: f64,
    /// `statistic > critical_value`.
    pub reject: bool,
    /// Statistic family.
    pub family: StatisticFamily,
    /// Estimator plugged into the statistic.
    pub estimator: EstimatorMethod,
    /// Generator and wrapper descriptor.
    pub lambda_or_phi: String,
}

/// Implied probabilities at the estimate and at the null, in the estimator's weight family.
#[derive(Debug, Clone, PartialEq)]
pub struct TestWeights {
    /// Weights at the estimate.
    pub p_hat: Vec<f64>,
    /// Weights at the null value.
    pub p_null: Vec<f64>,
    /// Uniform weights `1/n`.
    pub u: Vec<f64>,
}

impl TestWeights {
    /// Weights at `theta0` in the family of `est`. Infeasibility at the null is
    /// reported as `NullInfeasible`.
    pub fn new(model: &dyn MomentModel, sample: &Sample, theta0: &[f64], est: &EstimatorResult) -> Result<Self> {
        let mm0 = evaluate_moments(model, sample, theta0)?;
        let tilt0 =
            solve_multiplier(est.method.tilt_method(), &mm0, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(|e| match e {
                Error::HullFailure(msg) => Error::NullInfeasible(msg),
                other => other,
            })?;
        if est.tilt.weights.len() != sample.n() {
            return Err(Error::LengthMismatch { left: est.tilt.weights.len(), right: sample.n() });
        }
        let n = sample.n();
        Ok(Self { p_hat: est.tilt.weights.clone(), p_null: tilt0.weights, u: vec![1.0 / n as f64; n] })
    }

    fn n(&self) -> f64 {
        self.u.len() as f64
    }

    /// `T` statistic.
    pub fn t(&self, f: &PhiFunction) -> Result<f64> {
        let d0 = d_phi(&self.u, &self.p_null, f)?;
        let d1 = d_phi(&self.u, &self.p_hat, f)?;
        Ok(2.0 * self.n() / f.dd1() * (d0 - d1))
    }

    /// `S` statistic.
    pub fn s(&self, f: &PhiFunction) -> Result<f64> {
        Ok(2.0 * self.n() / f.dd1() * d_phi(&self.p_hat, &self.p_null, f)?)
    }

    /// Likelihood ratio `2 sum log p_hat - 2 sum log p0`.
    pub fn g2(&self) -> f64 {
        2.0 * self.p_hat.iter().zip(&self.p_null).map(|(a, b)| a.ln() - b.ln()).sum::<f64>()
    }

    /// `T` with wrapper `h`.
    pub fn t_h(&self, f: &PhiFunction, h: &HFunction) -> Result<f64> {
        let d0 = h.eval(d_phi(&self.u, &self.p_null, f)?)?;
        let d1 = h.eval(d_phi(&self.u, &self.p_hat, f)?)?;
        Ok(2.0 * self.n() / (f.dd1() * h.dh0()) * (d0 - d1))
    }

    /// `S` with wrapper `h`.
    pub fn s_h(&self, f: &PhiFunction, h: &HFunction) -> Result<f64> {
        let d = h.eval(d_phi(&self.p_hat, &self.p_null, f)?)?;
        Ok(2.0 * self.n() / (f.dd1() * h.dh0()) * d)
    }
}

/// `(2n/phi''(1)) (D_phi(u, p(theta0)) - D_phi(u, p(theta_hat)))`.
pub fn t_statistic(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    f: &PhiFunction,
    est: &EstimatorResult,
) -> Result<f64> {
    TestWeights::new(model, sample, theta0, est)?.t(f)
}

/// `(2n/phi''(1)) D_phi(p(theta_hat), p(theta0))`.
pub fn s_statistic(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    f: &PhiFunction,
    est: &EstimatorResult,
) -> Result<f64> {
    TestWeights::new(model, sample, theta0, est)?.s(f)
}

/// `2 sum log p_i(theta_hat) - 2 sum log p_i(theta0)`.
pub fn likelihood_ratio(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    est: &EstimatorResult,
) -> Result<f64> {
    Ok(TestWeights::new(model, sample, theta0, est)?.g2())
}

/// `(2n/(phi''(1) h'(0))) (h(D_phi(u, p0)) - h(D_phi(u, p_hat)))`.
pub fn hphi_t_statistic(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    f: &PhiFunction,
    h: &HFunction,
    est: &EstimatorResult,
) -> Result<f64> {
    TestWeights::new(model, sample, theta0, est)?.t_h(f, h)
}

/// `(2n/(phi''(1) h'(0))) h(D_phi(p_hat, p0))`.
pub fn hphi_s_statistic(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    f: &PhiFunction,
    h: &HFunction,
    est: &EstimatorResult,
) -> Result<f64> {
    TestWeights::new(model, sample, theta0, est)?.s_h(f, h)
}

/// Statistic of `family` from prepared weights.
pub fn statistic_value(
    w: &TestWeights,
    family: StatisticFamily,
    f: &PhiFunction,
    h: Option<&HFunction>,
) -> Result<f64> {
    let need_h = || h.ok_or_else(|| Error::ConfigError(format!("family {family} requires an h function")));
    match family {
        StatisticFamily::T => w.t(f),
        StatisticFamily::S => w.s(f),
        StatisticFamily::G2 => Ok(w.g2()),
        StatisticFamily::TH => w.t_h(f, need_h()?),
        StatisticFamily::SH => w.s_h(f, need_h()?),
    }
}

/// Decision for a statistic against `chi2_{df, alpha}`.
pub fn decide(statistic: f64, df: usize, alpha: f64) -> Result<(f64, f64, bool)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let critical = chi2_quantile(1.0 - alpha, df as f64)?;
    let p_value = if statistic >= 0.0 { chi2_sf(statistic, df as f64)? } else { 1.0 };
    Ok((critical, p_value, statistic > critical))
}

/// Estimates `theta`, evaluates the statistic at `theta0` and compares it with
/// the chi-squared critical value. The start is the sample mean.
#[allow(clippy::too_many_arguments)]
pub fn run_simple_test(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    family: StatisticFamily,
    f: &PhiFunction,
    h: Option<&HFunction>,
    est_method: EstimatorMethod,
    alpha: f64,
    opts: &EstimatorOptions,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let p = model.p();
    if theta0.len() != p {
        return Err(Error::DimensionMismatch { what: "theta0", expected: p, found: theta0.len() });
    }
    let est = estimate(est_method, model, sample, &sample_mean_init(sample, p), opts)?;
    let w = TestWeights::new(model, sample, theta0, &est)?;
    let statistic = statistic_value(&w, family, f, h)?;
    let (critical_value, p_value, reject) = decide(statistic, p, alpha)?;
    let label = match (family, h) {
        (StatisticFamily::G2, _) => "kullback".to_string(),
        (StatisticFamily::TH | StatisticFamily::SH, Some(h)) => format!("{} / {}", f.label(), h.label()),
        _ => f.label().to_string(),
    };
    Ok(TestResult {
        statistic,
        df: p,
        p_value,
        critical_value,
        alpha,
        reject,
        family,
        estimator: est_method,
        lambda_or_phi: label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{kullback_phi, power_divergence_phi};

    fn weights() -> TestWeights {
        let p_hat = vec![0.3, 0.3, 0.4];
        let p_null = vec![0.2, 0.5, 0.3];
        TestWeights { p_hat, p_null, u: vec![1.0 / 3.0; 3] }
    }

    #[test]
    fn g2_equals_kullback_t() {
        let w = weights();
        assert!((w.g2() - w.t(&kullback_phi()).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn scale_contract() {
        let w = weights();
        let f = power_divergence_phi(2.0 / 3.0);
        let g = f.scaled(3.5).unwrap();
        assert!((w.t(&f).unwrap() - w.t(&g).unwrap()).abs() < 1e-12);
        assert!((w.s(&f).unwrap() - w.s(&g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identity_h_matches_plain() {
        let w = weights();
        let f = power_divergence_phi(-0.5);
        let h = HFunction::identity();
        assert!((w.t_h(&f, &h).unwrap() - w.t(&f).unwrap()).abs() < 1e-12);
        assert!((w.s_h(&f, &h).unwrap() - w.s(&f).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn decisions() {
        let (c, p, r) = decide(3.85, 1, 0.05).unwrap();
        assert!(r && (c - 3.841458820694124).abs() < 1e-9 && p < 0.05);
        let (_, p, r) = decide(-0.2, 1, 0.05).unwrap();
        assert!(!r && p == 1.0);
        assert!(decide(1.0, 1, 1.0).is_err());
    }
}
