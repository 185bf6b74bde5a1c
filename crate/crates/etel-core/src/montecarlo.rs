//! Monte Carlo driver for the builtin model: replicated estimation and testing,
//! empirical sizes, CDFs and power curves.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{closed_form_beta, closed_form_mu, power_approx_s, power_approx_t};
use crate::divergence::{kullback_phi, power_divergence_phi, PhiFunction};
use crate::error::{Error, Result};
use crate::estimators::{estimate, sample_mean_init, EstimatorMethod, EstimatorOptions};
use crate::model::{mean_variance_normal_model, MeanVarianceNormal, Sample};
use crate::parallel::{ordered_map, Execution};
use crate::rng::ReplicationRng;
use crate::testing::{chi2_quantile, statistic_value, StatisticFamily, TestWeights};

/// Share of `R` above which failures trigger a warning.
pub const FAILURE_WARN_FRACTION: f64 = 0.01;

fn default_replications() -> usize {
    2000
}

fn default_model_delta() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.05
}

fn default_cdf_grid() -> Vec<f64> {
    (0..=40).map(|k| 0.25 * k as f64).collect()
}

/// Experiment description. Unknown keys are rejected on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Data variance offset: samples are `Normal(theta_true, theta_true^2 + delta)`.
    pub delta: f64,
    /// `delta` of the fitted model's second moment; misspecified when it differs from `delta`.
    #[serde(default = "default_model_delta")]
    pub model_delta: f64,
    /// Mean of the data-generating normal.
    pub theta_true: f64,
    /// Null value.
    pub theta0: f64,
    /// Sample size.
    pub n: usize,
    /// Replication count.
    #[serde(rename = "R", alias = "replications", default = "default_replications")]
    pub replications: usize,
    /// Power-divergence orders for the `T` and `S` families.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Estimators to run.
    pub estimators: Vec<EstimatorMethod>,
    /// Statistic families (`T`, `S`, `G2`).
    pub families: Vec<StatisticFamily>,
    /// Nominal level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Master seed of the replication streams.
    pub master_seed: u64,
    /// Grid for statistic CDFs.
    #[serde(default = "default_cdf_grid")]
    pub cdf_grid: Vec<f64>,
    /// Grid for estimator CDFs; `cdf_grid` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator_grid: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            model_delta: default_model_delta(),
            theta_true: 0.0,
            theta0: 0.0,
            n: 100,
            replications: default_replications(),
            lambdas: vec![-1.0, -0.5, 0.0, 2.0 / 3.0],
            estimators: vec![EstimatorMethod::ETEL],
            families: vec![StatisticFamily::T, StatisticFamily::S],
            alpha: default_alpha(),
            master_seed: 20_240_101,
            cdf_grid: default_cdf_grid(),
            estimator_grid: None,
        }
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::ConfigError(format!("{name} must contain finite values")));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::ConfigError(format!("{name} must be sorted ascending")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Checks every invariant of the configuration.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if self.replications < 1 {
            return bad("R must be at least 1".into());
        }
        if self.n < 3 {
            return bad(format!("n must be at least 3, got {}", self.n));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be finite and > 0, got {}", self.delta));
        }
        if !(self.model_delta > 0.0 && self.model_delta.is_finite()) {
            return bad(format!("model_delta must be finite and > 0, got {}", self.model_delta));
        }
        if !self.theta_true.is_finite() || !self.theta0.is_finite() {
            return bad("theta_true and theta0 must be finite".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        if self.families.is_empty() {
            return bad("at least one statistic family is required".into());
        }
        for fam in &self.families {
            if matches!(fam, StatisticFamily::TH | StatisticFamily::SH) {
                return bad(format!("family {fam} is not available in experiments"));
            }
        }
        let needs_lambda = self.families.iter().any(|f| matches!(f, StatisticFamily::T | StatisticFamily::S));
        if needs_lambda && self.lambdas.is_empty() {
            return bad("families T and S need at least one lambda".into());
        }
        if self.lambdas.iter().any(|l| !l.is_finite()) {
            return bad("lambdas must be finite".into());
        }
        check_grid("cdf_grid", &self.cdf_grid)?;
        if let Some(g) = &self.estimator_grid {
            check_grid("estimator_grid", g)?;
        }
        Ok(())
    }

    /// Statistic series in record order: estimator-major, then family, then lambda.
    pub fn statistic_keys(&self) -> Vec<StatKey> {
        let mut keys = Vec::new();
        for &estimator in &self.estimators {
            for &family in &self.families {
                if family == StatisticFamily::G2 {
                    keys.push(StatKey { family, lambda: None, estimator });
                } else {
                    for &l in &self.lambdas {
                        keys.push(StatKey { family, lambda: Some(l), estimator });
                    }
                }
            }
        }
        keys
    }

    fn estimator_grid(&self) -> &[f64] {
        self.estimator_grid.as_deref().unwrap_or(&self.cdf_grid)
    }
}

/// One statistic series of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatKey {
    /// Statistic family.
    pub family: StatisticFamily,
    /// Power-divergence order; `None` for `G2`.
    pub lambda: Option<f64>,
    /// Estimator of the unrestricted fit.
    pub estimator: EstimatorMethod,
}

impl StatKey {
    /// Column label such as `T_lambda=-1_ETEL`.
    pub fn label(&self) -> String {
        match self.lambda {
            Some(l) => format!("{}_lambda={}_{}", self.family, l, self.estimator),
            None => format!("{}_{}", self.family, self.estimator),
        }
    }

    fn phi(&self) -> PhiFunction {
        match self.lambda {
            Some(l) => power_divergence_phi(l),
            None => kullback_phi(),
        }
    }
}

/// Outcome of one replication. A `None` value carries its reason in the
/// matching error slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    /// Replication index.
    pub index: usize,
    /// Estimate per estimator, in config order.
    pub theta_hat: Vec<Option<f64>>,
    /// Estimator failure messages.
    pub estimator_errors: Vec<Option<String>>,
    /// Statistic per `StatKey`, in `statistic_keys` order.
    pub statistics: Vec<Option<f64>>,
    /// Statistic failure messages.
    pub statistic_errors: Vec<Option<String>>,
}

/// Empirical size of one statistic series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRow {
    /// Series.
    pub key: StatKey,
    /// Rejection proportion among valid replications; `None` if none were valid.
    pub size: Option<f64>,
    /// Rejections.
    pub rejections: usize,
    /// Valid replications.
    pub valid: usize,
    /// Failed replications.
    pub failures: usize,
}

/// Empirical CDF of a series on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfSeries {
    /// Column label.
    pub label: String,
    /// CDF values, `None` if the series has no valid values.
    pub values: Option<Vec<f64>>,
}

/// Aggregated experiment output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    /// Replication count.
    pub replications: usize,
    /// `chi2_{1, alpha}` critical value.
    pub critical_value: f64,
    /// Sizes per statistic series.
    pub sizes: Vec<SizeRow>,
    /// Grid of the statistic CDFs.
    pub cdf_grid: Vec<f64>,
    /// Statistic CDFs.
    pub statistic_cdfs: Vec<CdfSeries>,
    /// Grid of the estimator CDFs.
    pub estimator_grid: Vec<f64>,
    /// Estimator CDFs.
    pub estimator_cdfs: Vec<CdfSeries>,
    /// Failures per estimator.
    pub estimator_failures: Vec<(EstimatorMethod, usize)>,
    /// Set when some series failed in more than 1% of replications.
    pub warning: Option<String>,
}

/// Full double precision with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

fn cdf_csv(grid: &[f64], series: &[CdfSeries]) -> String {
    let mut out = String::from("grid");
    for s in series {
        out.push(',');
        out.push_str(&s.label);
    }
    out.push('\n');
    for (k, g) in grid.iter().enumerate() {
        out.push_str(&format_f64(*g));
        for s in series {
            out.push(',');
            out.push_str(&fmt_opt(s.values.as_ref().map(|v| v[k])));
        }
        out.push('\n');
    }
    out
}

impl SummaryTable {
    /// `family,lambda,estimator,size,failures` table. `lambda` is empty for `G2`
    /// and `size` is empty when every replication failed.
    pub fn sizes_csv(&self) -> String {
        let mut out = String::from("family,lambda,estimator,size,failures\n");
        for row in &self.sizes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.key.family,
                fmt_opt(row.key.lambda),
                row.key.estimator,
                fmt_opt(row.size),
                row.failures
            ));
        }
        out
    }

    /// Statistic CDFs, one column per series.
    pub fn cdf_csv(&self) -> String {
        cdf_csv(&self.cdf_grid, &self.statistic_cdfs)
    }

    /// Estimator CDFs, one column per estimator.
    pub fn estimator_cdf_csv(&self) -> String {
        cdf_csv(&self.estimator_grid, &self.estimator_cdfs)
    }

    /// Size of the series matching `family`, `lambda` and `estimator`.
    pub fn size(&self, family: StatisticFamily, lambda: Option<f64>, estimator: EstimatorMethod) -> Option<&SizeRow> {
        self.sizes.iter().find(|r| r.key.family == family && r.key.lambda == lambda && r.key.estimator == estimator)
    }
}

/// `#(values <= g) / count` for each grid point.
pub fn empirical_cdf(values: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyValues);
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::DomainError("grid must be sorted ascending".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid.iter().map(|&g| sorted.partition_point(|&v| v <= g) as f64 / n).collect())
}

/// Proportion of `stats` strictly above `critical`.
pub fn empirical_size(stats: &[f64], critical: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::EmptyValues);
    }
    Ok(stats.iter().filter(|&&s| s > critical).count() as f64 / stats.len() as f64)
}

/// Kolmogorov distance between the empirical distribution of `values` and `cdf`.
pub fn kolmogorov_distance<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &v) in sorted.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Draws the sample of replication `index`.
pub fn replication_sample(config: &ExperimentConfig, index: usize) -> Result<Sample> {
    let mut rng = ReplicationRng::new(config.master_seed, index as u64);
    let sd = (config.theta_true * config.theta_true + config.delta).sqrt();
    Sample::from_column(rng.normal_vec(config.n, config.theta_true, sd))
}

fn run_replication(
    config: &ExperimentConfig,
    keys: &[StatKey],
    model: &MeanVarianceNormal,
    opts: &EstimatorOptions,
    index: usize,
) -> ReplicationRecord {
    let k = config.estimators.len();
    let mut rec = ReplicationRecord {
        index,
        theta_hat: vec![None; k],
        estimator_errors: vec![None; k],
        statistics: vec![None; keys.len()],
        statistic_errors: vec![None; keys.len()],
    };
    let sample = match replication_sample(config, index) {
        Ok(s) => s,
        Err(e) => {
            rec.estimator_errors.iter_mut().for_each(|s| *s = Some(e.to_string()));
            rec.statistic_errors.iter_mut().for_each(|s| *s = Some(e.to_string()));
            return rec;
        }
    };
    let init = sample_mean_init(&sample, 1);
    for (j, &method) in config.estimators.iter().enumerate() {
        let idx: Vec<usize> = (0..keys.len()).filter(|&q| keys[q].estimator == method).collect();
        let weights = estimate(method, model, &sample, &init, opts).and_then(|est| {
            rec.theta_hat[j] = Some(est.theta_hat[0]);
            TestWeights::new(model, &sample, &[config.theta0], &est)
        });
        let w = match weights {
            Ok(w) => w,
            Err(e) => {
                if rec.theta_hat[j].is_none() {
                    rec.estimator_errors[j] = Some(e.to_string());
                }
                for q in idx {
                    rec.statistic_errors[q] = Some(e.to_string());
                }
                continue;
            }
        };
        for q in idx {
            match statistic_value(&w, keys[q].family, &keys[q].phi(), None) {
                Ok(v) if v.is_finite() => rec.statistics[q] = Some(v),
                Ok(v) => rec.statistic_errors[q] = Some(format!("non-finite statistic {v}")),
                Err(e) => rec.statistic_errors[q] = Some(e.to_string()),
            }
        }
    }
    rec
}

/// Runs the experiment on rayon's global pool (or sequentially without the
/// `parallel` feature).
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Vec<ReplicationRecord>, SummaryTable)> {
    run_experiment_with(config, Execution::default())
}

/// Runs the experiment with an explicit schedule. Output does not depend on it.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    exec: Execution,
) -> Result<(Vec<ReplicationRecord>, SummaryTable)> {
    config.validate()?;
    let model = mean_variance_normal_model(config.model_delta)?;
    let keys = config.statistic_keys();
    let opts = EstimatorOptions::default();
    let records = ordered_map(config.replications, exec, |i| run_replication(config, &keys, &model, &opts, i))?;
    let summary = summarize(config, &keys, &records)?;
    Ok((records, summary))
}

fn summarize(config: &ExperimentConfig, keys: &[StatKey], records: &[ReplicationRecord]) -> Result<SummaryTable> {
    let critical_value = chi2_quantile(1.0 - config.alpha, 1.0)?;
    let r = config.replications;
    let mut sizes = Vec::with_capacity(keys.len());
    let mut statistic_cdfs = Vec::with_capacity(keys.len());
    let mut noisy = Vec::new();
    for (q, key) in keys.iter().enumerate() {
        let vals: Vec<f64> = records.iter().filter_map(|rec| rec.statistics[q]).collect();
        let failures = r - vals.len();
        let rejections = vals.iter().filter(|&&s| s > critical_value).count();
        let size = if vals.is_empty() { None } else { Some(empirical_size(&vals, critical_value)?) };
        if failures as f64 > FAILURE_WARN_FRACTION * r as f64 {
            noisy.push(format!("{} ({failures} of {r})", key.label()));
        }
        sizes.push(SizeRow { key: *key, size, rejections, valid: vals.len(), failures });
        let values = if vals.is_empty() { None } else { Some(empirical_cdf(&vals, &config.cdf_grid)?) };
        statistic_cdfs.push(CdfSeries { label: key.label(), values });
    }
    let estimator_grid = config.estimator_grid().to_vec();
    let mut estimator_cdfs = Vec::new();
    let mut estimator_failures = Vec::new();
    for (j, &method) in config.estimators.iter().enumerate() {
        let vals: Vec<f64> = records.iter().filter_map(|rec| rec.theta_hat[j]).collect();
        estimator_failures.push((method, r - vals.len()));
        let values = if vals.is_empty() { None } else { Some(empirical_cdf(&vals, &estimator_grid)?) };
        estimator_cdfs.push(CdfSeries { label: format!("theta_hat_{method}"), values });
    }
    let warning = (!noisy.is_empty()).then(|| {
        format!("failures above {}% of replications excluded: {}", FAILURE_WARN_FRACTION * 100.0, noisy.join(", "))
    });
    Ok(SummaryTable {
        replications: r,
        critical_value,
        sizes,
        cdf_grid: config.cdf_grid.clone(),
        statistic_cdfs,
        estimator_grid,
        estimator_cdfs,
        estimator_failures,
        warning,
    })
}

/// One row of a power curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    /// Series.
    pub key: StatKey,
    /// Alternative.
    pub theta_star: f64,
    /// Simulated rejection rate with `theta_true = theta_star`.
    pub simulated: Option<f64>,
    /// Simulation failures.
    pub failures: usize,
    /// Plug-in `mu`.
    pub plugin_mu: Option<f64>,
    /// Plug-in standardized critical point.
    pub plugin_nu: Option<f64>,
    /// Plug-in approximate power.
    pub plugin_beta: Option<f64>,
    /// Closed-form `mu` (`T` family, `delta = 1`, `theta0 = 0`).
    pub closed_form_mu: Option<f64>,
    /// Closed-form approximate power.
    pub closed_form_beta: Option<f64>,
}

/// Stream index reserved for the plug-in sample of grid point `k`.
fn plugin_stream(k: usize) -> u64 {
    u64::MAX - k as u64
}

/// Simulated and approximate power over `theta_star_grid`. The plug-in values
/// use one sample of size `plugin_samples` drawn at each alternative.
pub fn power_curve(
    config: &ExperimentConfig,
    theta_star_grid: &[f64],
    plugin_samples: usize,
    exec: Execution,
) -> Result<Vec<PowerRow>> {
    config.validate()?;
    if theta_star_grid.is_empty() || theta_star_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::ConfigError("theta* grid must be non-empty and finite".into()));
    }
    if plugin_samples < 3 {
        return Err(Error::ConfigError("plugin_samples must be at least 3".into()));
    }
    let model = mean_variance_normal_model(config.model_delta)?;
    let closed_form_ok = config.delta == 1.0 && config.model_delta == 1.0 && config.theta0 == 0.0;
    let mut rows = Vec::new();
    for (k, &ts) in theta_star_grid.iter().enumerate() {
        let cfg = ExperimentConfig { theta_true: ts, ..config.clone() };
        let (_, summary) = run_experiment_with(&cfg, exec)?;
        let mut rng = ReplicationRng::new(config.master_seed, plugin_stream(k));
        let sd = (ts * ts + config.delta).sqrt();
        let big = Sample::from_column(rng.normal_vec(plugin_samples, ts, sd))?;
        for row in &summary.sizes {
            let key = row.key;
            let f = key.phi();
            let approx = match key.family {
                StatisticFamily::S => power_approx_s(&model, &big, &[config.theta0], &[ts], &f, config.n, config.alpha),
                _ => power_approx_t(&model, &big, &[config.theta0], &[ts], &f, config.n, config.alpha),
            }
            .ok();
            let lambda_cf = match key.family {
                StatisticFamily::T => key.lambda,
                StatisticFamily::G2 => Some(0.0),
                _ => None,
            };
            let (cf_mu, cf_beta) = match lambda_cf.filter(|_| closed_form_ok) {
                Some(l) => (closed_form_mu(l, ts).ok(), closed_form_beta(l, ts, config.n, config.alpha).ok()),
                None => (None, None),
            };
            rows.push(PowerRow {
                key,
                theta_star: ts,
                simulated: row.size,
                failures: row.failures,
                plugin_mu: approx.as_ref().map(|a| a.mu),
                plugin_nu: approx.as_ref().map(|a| a.nu),
                plugin_beta: approx.as_ref().map(|a| a.beta_star),
                closed_form_mu: cf_mu,
                closed_form_beta: cf_beta,
            });
        }
    }
    Ok(rows)
}

/// `family,lambda,estimator,theta_star,simulated,failures,plugin_mu,plugin_nu,
/// plugin_beta,closed_form_mu,closed_form_beta` table.
pub fn power_curve_csv(rows: &[PowerRow]) -> String {
    let mut out = String::from(
        "family,lambda,estimator,theta_star,simulated,failures,plugin_mu,plugin_nu,plugin_beta,closed_form_mu,closed_form_beta\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.key.family,
            fmt_opt(r.key.lambda),
            r.key.estimator,
            format_f64(r.theta_star),
            fmt_opt(r.simulated),
            r.failures,
            fmt_opt(r.plugin_mu),
            fmt_opt(r.plugin_nu),
            fmt_opt(r.plugin_beta),
            fmt_opt(r.closed_form_mu),
            fmt_opt(r.closed_form_beta),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig { n: 50, replications: 20, master_seed: 3, ..Default::default() }
    }

    #[test]
    fn cdf_and_size_examples() {
        assert_eq!(empirical_cdf(&[1.0, 2.0, 3.0], &[2.0]).unwrap(), vec![2.0 / 3.0]);
        assert_eq!(empirical_cdf(&[1.0, 2.0], &[0.5, 9.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(empirical_cdf(&[], &[1.0]), Err(Error::EmptyValues));
        assert!(empirical_cdf(&[1.0], &[2.0, 1.0]).is_err());
        assert_eq!(empirical_size(&[1.0, 5.0, 2.0], 3.84).unwrap(), 1.0 / 3.0);
        assert_eq!(empirical_size(&[1.0, 2.0], f64::NEG_INFINITY).unwrap(), 1.0);
        assert_eq!(empirical_size(&[1.0, 2.0], f64::INFINITY).unwrap(), 0.0);
        assert_eq!(empirical_size(&[], 1.0), Err(Error::EmptyValues));
    }

    #[test]
    fn kolmogorov_of_uniform_grid() {
        let v: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        assert!((kolmogorov_distance(&v, |x| x).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        assert!(ExperimentConfig { replications: 0, ..small() }.validate().is_err());
        assert!(ExperimentConfig { n: 2, ..small() }.validate().is_err());
        assert!(ExperimentConfig { alpha: 1.0, ..small() }.validate().is_err());
        assert!(ExperimentConfig { cdf_grid: vec![2.0, 1.0], ..small() }.validate().is_err());
        assert!(ExperimentConfig { families: vec![StatisticFamily::TH], ..small() }.validate().is_err());
    }

    #[test]
    fn config_json_round_trip_and_unknown_keys() {
        let c = small();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"R\":20"));
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), c);
        let bad = r#"{"delta":1,"theta_true":0,"theta0":0,"n":10,"estimators":["ETEL"],"families":["T"],"lambdas":[0],"master_seed":1,"bogus":1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
        let ok = bad.replace(",\"bogus\":1", "");
        let parsed: ExperimentConfig = serde_json::from_str(&ok).unwrap();
        assert_eq!(parsed.replications, 2000);
    }

    #[test]
    fn single_replication_sizes_are_binary() {
        let cfg = ExperimentConfig { replications: 1, ..small() };
        let (recs, summary) = run_experiment_with(&cfg, Execution::Sequential).unwrap();
        assert_eq!(recs.len(), 1);
        for row in &summary.sizes {
            if let Some(s) = row.size {
                assert!(s == 0.0 || s == 1.0);
            }
        }
    }

    #[test]
    fn schedule_does_not_change_output() {
        let cfg = small();
        let (ra, a) = run_experiment_with(&cfg, Execution::Sequential).unwrap();
        let (rb, b) = run_experiment_with(&cfg, Execution::Threads(3)).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(a.sizes_csv(), b.sizes_csv());
        for s in &a.statistic_cdfs {
            let v = s.values.as_ref().unwrap();
            assert!(v.windows(2).all(|w| w[0] <= w[1]) && *v.last().unwrap() <= 1.0);
        }
    }

    #[test]
    fn csv_formatting() {
        assert_eq!(format_f64(0.05), "5.0000000000000003e-2");
        let cfg = ExperimentConfig { replications: 4, families: vec![StatisticFamily::G2], ..small() };
        let (_, s) = run_experiment_with(&cfg, Execution::Sequential).unwrap();
        let csv = s.sizes_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "family,lambda,estimator,size,failures");
        assert!(lines.next().unwrap().starts_with("G2,,ETEL,"));
    }
}
