//! Moment-condition models, samples and evaluated moment matrices.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observations `X_1, ..., X_n`, stored row-major as `n` rows of `d` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    /// Builds a sample from row-major data with `d` columns.
    pub fn new(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::DimensionMismatch { what: "sample columns", expected: 1, found: 0 });
        }
        if data.is_empty() || data.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                what: "sample length (multiple of d, nonzero)",
                expected: d,
                found: data.len(),
            });
        }
        if let Some(row) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::DomainError(format!("non-finite observation at row {}", row / d)));
        }
        let n = data.len() / d;
        Ok(Self { data, n, d })
    }

    /// Builds a univariate sample.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of variables per observation.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Observation `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Row-major raw data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Column mean of variable `j`.
    pub fn column_mean(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.row(i)[j]).sum::<f64>() / self.n as f64
    }
}

/// An estimating-function bundle `g(x, theta)` with its Jacobian `G_x(theta)`.
///
/// `g` writes `r` values; `jacobian` writes the `r x p` matrix row-major,
/// so `out[j * p + k]` holds the derivative of `g_j` with respect to `theta_k`.
pub trait MomentModel: Send + Sync {
    /// Parameter dimension `p`.
    fn p(&self) -> usize;
    /// Number of estimating functions `r >= p`.
    fn r(&self) -> usize;
    /// Number of variables per observation.
    fn d(&self) -> usize;
    /// Evaluates `g(x, theta)` into `out`.
    fn g(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    /// Evaluates the Jacobian of `g` with respect to `theta` into `out`.
    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]);
    /// Optional box bounds for `theta`.
    fn param_domain(&self) -> Option<&[(f64, f64)]> {
        None
    }
    /// Short human-readable descriptor.
    fn label(&self) -> String {
        format!("model(p={}, r={})", self.p(), self.r())
    }
}

/// Central-difference step used for numerical derivatives.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central finite-difference Jacobian of `g` at `(x, theta)`, row-major `r x p`.
pub fn finite_difference_jacobian<F>(g: F, r: usize, x: &[f64], theta: &[f64], out: &mut [f64])
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    let p = theta.len();
    let mut th = theta.to_vec();
    let mut plus = vec![0.0; r];
    let mut minus = vec![0.0; r];
    for k in 0..p {
        let h = fd_step(theta[k]);
        th[k] = theta[k] + h;
        g(x, &th, &mut plus);
        th[k] = theta[k] - h;
        g(x, &th, &mut minus);
        th[k] = theta[k];
        for j in 0..r {
            out[j * p + k] = (plus[j] - minus[j]) / (2.0 * h);
        }
    }
}

type MomentFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A model defined by closures. Without an analytic Jacobian, central
/// differences with step `1e-6 * max(1, |theta_k|)` are used.
#[derive(Clone)]
pub struct FnModel {
    p: usize,
    r: usize,
    d: usize,
    g: MomentFn,
    jac: Option<MomentFn>,
    domain: Option<Vec<(f64, f64)>>,
    label: String,
}

impl FnModel {
    /// Model with an analytic Jacobian.
    pub fn new<G, J>(p: usize, r: usize, d: usize, g: G, jacobian: J) -> Result<Self>
    where
        G: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::build(p, r, d, Arc::new(g), Some(Arc::new(jacobian)))
    }

    /// Model whose Jacobian is obtained by central finite differences.
    pub fn with_finite_difference_jacobian<G>(p: usize, r: usize, d: usize, g: G) -> Result<Self>
    where
        G: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::build(p, r, d, Arc::new(g), None)
    }

    fn build(p: usize, r: usize, d: usize, g: MomentFn, jac: Option<MomentFn>) -> Result<Self> {
        if p == 0 || d == 0 || r < p {
            return Err(Error::DimensionMismatch { what: "model requires r >= p >= 1", expected: p.max(1), found: r });
        }
        Ok(Self { p, r, d, g, jac, domain: None, label: format!("custom(p={p}, r={r})") })
    }

    /// Attaches box bounds for `theta`.
    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        if domain.len() != self.p {
            return Err(Error::DimensionMismatch { what: "domain", expected: self.p, found: domain.len() });
        }
        self.domain = Some(domain);
        Ok(self)
    }

    /// Replaces the descriptor.
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl MomentModel for FnModel {
    fn p(&self) -> usize {
        self.p
    }
    fn r(&self) -> usize {
        self.r
    }
    fn d(&self) -> usize {
        self.d
    }
    fn g(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        (self.g)(x, theta, out)
    }
    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        match &self.jac {
            Some(j) => j(x, theta, out),
            None => finite_difference_jacobian(|x, t, o| (self.g)(x, t, o), self.r, x, theta, out),
        }
    }
    fn param_domain(&self) -> Option<&[(f64, f64)]> {
        self.domain.as_deref()
    }
    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Builtin mean-variance normal model: `g1 = x - theta`, `g2 = x^2 - 2 theta^2 - delta`.
///
/// `delta = 1` is the correctly specified model for `N(theta, theta^2 + 1)` data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanVarianceNormal {
    delta: f64,
    domain: [(f64, f64); 1],
}

/// Parameter bounds used for bracketing by the builtin model.
pub const BUILTIN_DOMAIN: (f64, f64) = (-10.0, 10.0);

/// Constructs the builtin model for a given `delta > 0`.
pub fn mean_variance_normal_model(delta: f64) -> Result<MeanVarianceNormal> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok(MeanVarianceNormal { delta, domain: [BUILTIN_DOMAIN] })
}

impl MeanVarianceNormal {
    /// The misspecification parameter.
    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl MomentModel for MeanVarianceNormal {
    fn p(&self) -> usize {
        1
    }
    fn r(&self) -> usize {
        2
    }
    fn d(&self) -> usize {
        1
    }
    #[inline]
    fn g(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let (x, th) = (x[0], theta[0]);
        out[0] = x - th;
        out[1] = x * x - 2.0 * th * th - self.delta;
    }
    #[inline]
    fn jacobian(&self, _x: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = -1.0;
        out[1] = -4.0 * theta[0];
    }
    fn param_domain(&self) -> Option<&[(f64, f64)]> {
        Some(&self.domain)
    }
    fn label(&self) -> String {
        format!("mean-variance-normal(delta={})", self.delta)
    }
}

/// Evaluated estimating functions: row `i` is `g(X_i, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    values: Vec<f64>,
    n: usize,
    r: usize,
    theta: Vec<f64>,
}

impl MomentMatrix {
    /// Wraps explicit rows (all of equal length `r`).
    pub fn from_rows(rows: &[Vec<f64>], theta: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyValues);
        }
        let r = rows[0].len();
        let mut values = Vec::with_capacity(n * r);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != r {
                return Err(Error::DimensionMismatch { what: "moment row", expected: r, found: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteModelOutput { row: i });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { values, n, r, theta })
    }

    /// Wraps a row-major buffer.
    pub fn from_flat(values: Vec<f64>, r: usize, theta: Vec<f64>) -> Result<Self> {
        if r == 0 || values.is_empty() || values.len() % r != 0 {
            return Err(Error::DimensionMismatch { what: "moment buffer", expected: r, found: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteModelOutput { row: k / r });
        }
        let n = values.len() / r;
        Ok(Self { values, n, r, theta })
    }

    /// Number of rows.
    pub fn n(&self) -> usize {
        self.n
    }
    /// Number of estimating functions.
    pub fn r(&self) -> usize {
        self.r
    }
    /// Row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.r..(i + 1) * self.r]
    }
    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    /// Parameter at which the rows were evaluated.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    /// Iterator over rows.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.r)
    }
}

/// Per-observation Jacobians `G_{X_i}(theta)`, each `r x p` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianStack {
    values: Vec<f64>,
    n: usize,
    r: usize,
    p: usize,
}

impl JacobianStack {
    /// Number of observations.
    pub fn n(&self) -> usize {
        self.n
    }
    /// Rows of each Jacobian.
    pub fn r(&self) -> usize {
        self.r
    }
    /// Columns of each Jacobian.
    pub fn p(&self) -> usize {
        self.p
    }
    /// Jacobian of observation `i`, row-major `r x p`.
    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        let sz = self.r * self.p;
        &self.values[i * sz..(i + 1) * sz]
    }
    /// Jacobian of observation `i` as a matrix.
    pub fn matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r, self.p, self.get(i))
    }
}

fn check_theta(model: &dyn MomentModel, sample: &Sample, theta: &[f64]) -> Result<()> {
    if theta.len() != model.p() {
        return Err(Error::DimensionMismatch { what: "theta", expected: model.p(), found: theta.len() });
    }
    if sample.d() != model.d() {
        return Err(Error::DimensionMismatch { what: "sample columns", expected: model.d(), found: sample.d() });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::DomainError("non-finite theta".into()));
    }
    if let Some(dom) = model.param_domain() {
        for (k, (&th, &(lo, hi))) in theta.iter().zip(dom).enumerate() {
            if th < lo || th > hi {
                return Err(Error::DomainError(format!("theta[{k}] = {th} outside [{lo}, {hi}]")));
            }
        }
    }
    Ok(())
}

/// Evaluates `g(X_i, theta)` for every observation.
pub fn evaluate_moments(model: &dyn MomentModel, sample: &Sample, theta: &[f64]) -> Result<MomentMatrix> {
    check_theta(model, sample, theta)?;
    let r = model.r();
    let mut values = vec![0.0; sample.n() * r];
    for (i, out) in values.chunks_exact_mut(r).enumerate() {
        model.g(sample.row(i), theta, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteModelOutput { row: i });
        }
    }
    Ok(MomentMatrix { values, n: sample.n(), r, theta: theta.to_vec() })
}

/// Evaluates `G_{X_i}(theta)` for every observation.
pub fn evaluate_jacobians(model: &dyn MomentModel, sample: &Sample, theta: &[f64]) -> Result<JacobianStack> {
    check_theta(model, sample, theta)?;
    let (r, p) = (model.r(), model.p());
    let mut values = vec![0.0; sample.n() * r * p];
    for (i, out) in values.chunks_exact_mut(r * p).enumerate() {
        model.jacobian(sample.row(i), theta, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteModelOutput { row: i });
        }
    }
    Ok(JacobianStack { values, n: sample.n(), r, p })
}

/// Column means `g_bar_n(theta)`.
pub fn mean_moments(mm: &MomentMatrix) -> Vec<f64> {
    let mut m = vec![0.0; mm.r()];
    for row in mm.rows() {
        for (a, b) in m.iter_mut().zip(row) {
            *a += b;
        }
    }
    let n = mm.n() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// `(1/n) sum g_i g_i'`.
pub fn sample_s11(mm: &MomentMatrix) -> DMatrix<f64> {
    let r = mm.r();
    let mut s = DMatrix::zeros(r, r);
    for row in mm.rows() {
        for a in 0..r {
            for b in a..r {
                s[(a, b)] += row[a] * row[b];
            }
        }
    }
    let n = mm.n() as f64;
    for a in 0..r {
        for b in a..r {
            let v = s[(a, b)] / n;
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    s
}

/// Mean Jacobian `(1/n) sum G_{X_i}(theta)` as an `r x p` matrix.
pub fn sample_s12(model: &dyn MomentModel, sample: &Sample, theta: &[f64]) -> Result<DMatrix<f64>> {
    let jac = evaluate_jacobians(model, sample, theta)?;
    Ok(mean_jacobian(&jac))
}

/// Mean of a Jacobian stack.
pub fn mean_jacobian(jac: &JacobianStack) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(jac.r(), jac.p());
    for i in 0..jac.n() {
        let g = jac.get(i);
        for a in 0..jac.r() {
            for k in 0..jac.p() {
                s[(a, k)] += g[a * jac.p() + k];
            }
        }
    }
    s / jac.n() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin(delta: f64) -> MeanVarianceNormal {
        mean_variance_normal_model(delta).unwrap()
    }

    #[test]
    fn builtin_rows() {
        let m = builtin(1.0);
        let s = Sample::from_column(vec![2.0]).unwrap();
        assert_eq!(evaluate_moments(&m, &s, &[0.0]).unwrap().row(0), &[2.0, 3.0]);
        let s = Sample::from_column(vec![1.0]).unwrap();
        assert_eq!(evaluate_moments(&m, &s, &[1.0]).unwrap().row(0), &[0.0, -2.0]);
        let s = Sample::from_column(vec![0.0]).unwrap();
        assert_eq!(evaluate_moments(&builtin(0.7), &s, &[0.0]).unwrap().row(0), &[0.0, -0.7]);
        let s = Sample::from_column(vec![1.0]).unwrap();
        let row = evaluate_moments(&builtin(1.3), &s, &[0.0]).unwrap();
        assert!((row.row(0)[1] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn builtin_jacobian_and_s12() {
        let m = builtin(0.7);
        let mut out = [0.0; 2];
        m.jacobian(&[0.3], &[2.0], &mut out);
        assert_eq!(out, [-1.0, -8.0]);
        let s = Sample::from_column(vec![0.1, -0.4, 2.0]).unwrap();
        assert_eq!(sample_s12(&m, &s, &[0.0]).unwrap().as_slice(), &[-1.0, 0.0]);
        assert_eq!(sample_s12(&m, &s, &[1.0]).unwrap().as_slice(), &[-1.0, -4.0]);
    }

    #[test]
    fn invalid_delta() {
        assert_eq!(mean_variance_normal_model(0.0), Err(Error::InvalidDelta(0.0)));
        assert!(mean_variance_normal_model(-1.0).is_err());
        assert!(mean_variance_normal_model(f64::NAN).is_err());
    }

    #[test]
    fn means_and_s11() {
        let mm = MomentMatrix::from_rows(&[vec![-1.0], vec![1.0]], vec![]).unwrap();
        assert_eq!(mean_moments(&mm), vec![0.0]);
        assert_eq!(sample_s11(&mm)[(0, 0)], 1.0);
        let mm = MomentMatrix::from_rows(&[vec![-1.0, 0.0], vec![2.0, 4.0]], vec![]).unwrap();
        assert_eq!(mean_moments(&mm), vec![0.5, 2.0]);
        let mm = MomentMatrix::from_rows(&[vec![3.0, -1.0]], vec![]).unwrap();
        assert_eq!(mean_moments(&mm), vec![3.0, -1.0]);
        let mm = MomentMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![]).unwrap();
        assert_eq!(sample_s11(&mm).as_slice(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn linear_model_s12() {
        let m = FnModel::new(1, 1, 1, |x, t, o| o[0] = x[0] - t[0], |_, _, o| o[0] = -1.0).unwrap();
        let s = Sample::from_column(vec![1.0, 2.0]).unwrap();
        assert_eq!(sample_s12(&m, &s, &[0.5]).unwrap()[(0, 0)], -1.0);
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        let fd = FnModel::with_finite_difference_jacobian(1, 2, 1, |x, t, o| {
            o[0] = x[0] - t[0];
            o[1] = x[0] * x[0] - 2.0 * t[0] * t[0] - 1.0;
        })
        .unwrap();
        let mut out = [0.0; 2];
        fd.jacobian(&[0.5], &[1.5], &mut out);
        assert!((out[0] + 1.0).abs() < 1e-8 && (out[1] + 6.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = builtin(1.0);
        let s = Sample::new(vec![1.0, 2.0], 2).unwrap();
        assert!(matches!(evaluate_moments(&m, &s, &[0.0]), Err(Error::DimensionMismatch { .. })));
        let s = Sample::from_column(vec![1.0]).unwrap();
        assert!(matches!(evaluate_moments(&m, &s, &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(evaluate_moments(&m, &s, &[11.0]), Err(Error::DomainError(_))));
        let bad = FnModel::with_finite_difference_jacobian(1, 1, 1, |_, _, o| o[0] = f64::NAN).unwrap();
        assert_eq!(evaluate_moments(&bad, &s, &[0.0]), Err(Error::NonFiniteModelOutput { row: 0 }));
    }
}
