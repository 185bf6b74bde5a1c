//! Sandwich matrices, power approximations under fixed, contiguous and
//! misspecified alternatives, influence functions and analytic gradients of
//! ET-based divergences.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::distributions::{chi2_quantile, noncentral_chi2_sf, normal_cdf, normal_quantile};
use crate::divergence::{kullback_phi, PhiFunction, LAMBDA_BRANCH_TOL};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorMethod, EstimatorResult};
use crate::linalg::{general_inverse, spd_inverse, symmetrize};
use crate::model::{
    evaluate_jacobians, evaluate_moments, fd_step, mean_jacobian, mean_moments, sample_s11, JacobianStack,
    MomentMatrix, MomentModel, Sample,
};
use crate::tilting::{solve_et_multiplier, TiltMethod, TiltSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Plug-in `S11`, `S12`, `V = (S12' S11^-1 S12)^-1` and
/// `R = S11^-1 - S11^-1 S12 V S12' S11^-1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichBlocks {
    /// `(1/n) sum g g'`, `r x r`.
    pub s11: DMatrix<f64>,
    /// `(1/n) sum G`, `r x p`.
    pub s12: DMatrix<f64>,
    /// Asymptotic variance of the estimators, `p x p`.
    pub v: DMatrix<f64>,
    /// Limit variance of the multiplier, `r x r`.
    pub r: DMatrix<f64>,
}

/// Normal approximation to the statistic under a fixed alternative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedAltApprox {
    /// ET multiplier at the null on data from the alternative.
    pub tau: Vec<f64>,
    /// Limit of `phi''(1) statistic / (2n)`.
    pub mu: f64,
    /// Gradient vector (stacked for the S family).
    pub s: Vec<f64>,
    /// Covariance matrix paired with `s`.
    pub m: DMatrix<f64>,
    /// `s' M s`.
    pub quadratic: f64,
    /// Standardized critical point.
    pub nu: f64,
    /// Approximate power `1 - Phi(nu)`.
    pub beta_star: f64,
}

/// Stacked joint value `(theta, t, kappa, tau)` of the misspecification system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointPseudoValue {
    /// Parameter.
    pub theta: Vec<f64>,
    /// ET multiplier.
    pub t: Vec<f64>,
    /// Auxiliary vector.
    pub kappa: Vec<f64>,
    /// Mean of `exp(t'g)`.
    pub tau_scalar: f64,
}

impl JointPseudoValue {
    /// `(theta, t, kappa, tau)` as one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.extend_from_slice(&self.t);
        v.extend_from_slice(&self.kappa);
        v.push(self.tau_scalar);
        v
    }

    /// Inverse of `to_vec`.
    pub fn from_slice(beta: &[f64], p: usize, r: usize) -> Result<Self> {
        if beta.len() != p + 2 * r + 1 {
            return Err(Error::DimensionMismatch { what: "beta", expected: p + 2 * r + 1, found: beta.len() });
        }
        Ok(Self {
            theta: beta[..p].to_vec(),
            t: beta[p..p + r].to_vec(),
            kappa: beta[p + r..p + 2 * r].to_vec(),
            tau_scalar: beta[p + 2 * r],
        })
    }
}

/// Statistic family of a misspecification power approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MisspecFamily {
    /// `T` statistics.
    T,
    /// `S` statistics.
    S,
    /// Likelihood ratio.
    G2,
}

/// Sandwich law of the ETEL estimator under misspecification and, once
/// completed by `misspec_power`, the power approximation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisspecLaw {
    /// Mean Jacobian of the stacked system.
    pub gamma: DMatrix<f64>,
    /// Mean outer product of the stacked system.
    pub phi: DMatrix<f64>,
    /// Leading `p x p` block of `Gamma^-1 Phi Gamma^-T`.
    pub sigma_theta: DMatrix<f64>,
    /// Gradient vector of the statistic at the pseudo-true value.
    pub r_or_q: Option<Vec<f64>>,
    /// Limit of `phi''(1) statistic / (2n)`.
    pub mu_star: Option<f64>,
    /// Standardized critical point.
    pub nu: Option<f64>,
    /// Approximate power.
    pub beta_star: Option<f64>,
}

/// Analytic gradient of a divergence together with its expectation-form limit
/// evaluated with sample means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceGradient {
    /// Exact derivative of the empirical divergence.
    pub gradient: Vec<f64>,
    /// Plug-in limit vector.
    pub limit: Vec<f64>,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_n(n_eval: usize) -> Result<()> {
    if n_eval == 0 {
        return Err(Error::DomainError("n_eval must be positive".into()));
    }
    Ok(())
}

/// Plug-in sandwich blocks at `theta`.
pub fn sandwich_blocks(model: &dyn MomentModel, sample: &Sample, theta: &[f64]) -> Result<SandwichBlocks> {
    let mm = evaluate_moments(model, sample, theta)?;
    let s11 = sample_s11(&mm);
    let s12 = mean_jacobian(&evaluate_jacobians(model, sample, theta)?);
    blocks_from(s11, s12)
}

fn blocks_from(s11: DMatrix<f64>, s12: DMatrix<f64>) -> Result<SandwichBlocks> {
    let s11_inv = spd_inverse(&s11).ok_or_else(|| Error::SingularMoments("S11 is singular".into()))?;
    let info = symmetrize(&(s12.transpose() * &s11_inv * &s12));
    let v = spd_inverse(&info).ok_or_else(|| Error::RankDeficient("S12' S11^-1 S12 is singular".into()))?;
    let r = symmetrize(&(&s11_inv - &s11_inv * &s12 * &v * s12.transpose() * &s11_inv));
    Ok(SandwichBlocks { s11, s12, v, r })
}

/// Multiplier `tau` solving `(1/n) sum exp(tau'g_i(theta0)) g_i(theta0) = 0`.
pub fn solve_tau(mm_at_theta0: &MomentMatrix) -> Result<Vec<f64>> {
    Ok(solve_et_multiplier(mm_at_theta0, DEFAULT_TOL, DEFAULT_MAX_ITER)?.t)
}

/// Per-observation quantities of an ET tilt: `e_i = exp(t'g_i - shift)`, their mean,
/// `G_i' t`, `mean(e G')/e_bar` and `K_hat`.
struct TiltedMoments {
    e: Vec<f64>,
    e_bar: f64,
    gt: Vec<DVector<f64>>,
    pg_t: DMatrix<f64>,
    k_hat: DMatrix<f64>,
}

fn jac_t_dot(jac: &JacobianStack, i: usize, t: &[f64]) -> DVector<f64> {
    let (r, p) = (jac.r(), jac.p());
    let gi = jac.get(i);
    DVector::from_iterator(p, (0..p).map(|k| (0..r).map(|a| gi[a * p + k] * t[a]).sum()))
}

impl TiltedMoments {
    fn new(mm: &MomentMatrix, jac: &JacobianStack, t: &[f64]) -> Result<Self> {
        let (n, r, p) = (mm.n(), mm.r(), jac.p());
        let s: Vec<f64> = mm.rows().map(|g| g.iter().zip(t).map(|(a, b)| a * b).sum()).collect();
        let shift = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - shift).exp()).collect();
        let e_sum: f64 = e.iter().sum();
        let e_bar = e_sum / n as f64;
        let mut a = DMatrix::<f64>::zeros(r, r);
        let mut b = DMatrix::<f64>::zeros(p, r);
        let mut pg_t = DMatrix::<f64>::zeros(p, r);
        let mut gt = Vec::with_capacity(n);
        for i in 0..n {
            let w = e[i] / e_sum;
            let g = DVector::from_column_slice(mm.row(i));
            let gi = jac.matrix(i);
            let git = jac_t_dot(jac, i, t);
            a += w * &g * g.transpose();
            let gi_t = gi.transpose();
            b += w * (&git * g.transpose() + &gi_t);
            pg_t += w * gi_t;
            gt.push(git);
        }
        let a_inv = spd_inverse(&symmetrize(&a))
            .ok_or_else(|| Error::SingularMoments("exp-weighted g g' matrix is singular".into()))?;
        Ok(Self { e, e_bar, gt, pg_t, k_hat: b * a_inv })
    }

    fn weight(&self, i: usize) -> f64 {
        self.e[i] / (self.e_bar * self.e.len() as f64)
    }

    /// `d p_i / d theta`.
    fn dp(&self, i: usize, mm: &MomentMatrix, t: &[f64]) -> DVector<f64> {
        let pg_t_t = &self.pg_t * DVector::from_column_slice(t);
        let g = DVector::from_column_slice(mm.row(i));
        self.weight(i) * (&self.gt[i] - pg_t_t - &self.k_hat * g)
    }

    /// `e_bar^-1 [mean(e c G't) - e_bar^-1 mean(e c) mean(e G')t - K mean(e c g)]`
    /// for per-observation coefficients `c`.
    fn expectation_form(&self, mm: &MomentMatrix, t: &[f64], c: &[f64]) -> DVector<f64> {
        let n = mm.n() as f64;
        let p = self.k_hat.nrows();
        let r = mm.r();
        let mut m_cgt = DVector::zeros(p);
        let mut m_c = 0.0;
        let mut m_cg = DVector::zeros(r);
        for i in 0..mm.n() {
            let ec = self.e[i] * c[i] / n;
            m_cgt += ec * &self.gt[i];
            m_c += ec;
            m_cg += ec * DVector::from_column_slice(mm.row(i));
        }
        let mean_eg_t = self.e_bar * &self.pg_t * DVector::from_column_slice(t);
        (m_cgt - (m_c / self.e_bar) * mean_eg_t - &self.k_hat * m_cg) / self.e_bar
    }
}

fn check_tilt(mm: &MomentMatrix, tilt: &TiltSolution, model: &dyn MomentModel, theta: &[f64]) -> Result<()> {
    if tilt.method != TiltMethod::ET {
        return Err(Error::DomainError("ET tilt required".into()));
    }
    if tilt.t.len() != mm.r() || mm.r() != model.r() {
        return Err(Error::DimensionMismatch { what: "multiplier", expected: model.r(), found: tilt.t.len() });
    }
    if theta.len() != model.p() {
        return Err(Error::DimensionMismatch { what: "theta", expected: model.p(), found: theta.len() });
    }
    Ok(())
}

/// `d p_ET,i / d theta` for every observation, as an `n x p` matrix.
pub fn weight_gradient(
    mm: &MomentMatrix,
    tilt: &TiltSolution,
    model: &dyn MomentModel,
    sample: &Sample,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    check_tilt(mm, tilt, model, theta)?;
    let jac = evaluate_jacobians(model, sample, theta)?;
    let tm = TiltedMoments::new(mm, &jac, &tilt.t)?;
    let mut out = DMatrix::zeros(mm.n(), model.p());
    for i in 0..mm.n() {
        out.set_row(i, &tm.dp(i, mm, &tilt.t).transpose());
    }
    Ok(out)
}

/// Gradient of `D_phi(u, p_ET(theta))` and its plug-in limit.
pub fn dphi_u_gradient(
    mm: &MomentMatrix,
    tilt: &TiltSolution,
    model: &dyn MomentModel,
    sample: &Sample,
    theta: &[f64],
    f: &PhiFunction,
) -> Result<DivergenceGradient> {
    check_tilt(mm, tilt, model, theta)?;
    let jac = evaluate_jacobians(model, sample, theta)?;
    let tm = TiltedMoments::new(mm, &jac, &tilt.t)?;
    let n = mm.n() as f64;
    let mut grad = DVector::zeros(model.p());
    let mut psi = Vec::with_capacity(mm.n());
    for i in 0..mm.n() {
        let c = f.psi(1.0 / (n * tm.weight(i)));
        grad += c * tm.dp(i, mm, &tilt.t);
        psi.push(c);
    }
    let limit = tm.expectation_form(mm, &tilt.t, &psi);
    Ok(DivergenceGradient { gradient: vec_of(&grad), limit: vec_of(&limit) })
}

/// Gradient in `theta` of `D_phi(p_ET(theta), p_ET(theta0))` and its plug-in limit.
pub fn dphi_pp_gradient(
    mm: &MomentMatrix,
    tilt: &TiltSolution,
    model: &dyn MomentModel,
    sample: &Sample,
    theta: &[f64],
    theta0: &[f64],
    f: &PhiFunction,
) -> Result<DivergenceGradient> {
    check_tilt(mm, tilt, model, theta)?;
    let mm0 = evaluate_moments(model, sample, theta0)?;
    let tilt0 = solve_et_multiplier(&mm0, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let jac = evaluate_jacobians(model, sample, theta)?;
    let tm = TiltedMoments::new(mm, &jac, &tilt.t)?;
    let mut grad = DVector::zeros(model.p());
    let mut dphi = Vec::with_capacity(mm.n());
    for i in 0..mm.n() {
        let c = f.dphi(tm.weight(i) / tilt0.weights[i]);
        grad += c * tm.dp(i, mm, &tilt.t);
        dphi.push(c);
    }
    let limit = tm.expectation_form(mm, &tilt.t, &dphi);
    Ok(DivergenceGradient { gradient: vec_of(&grad), limit: vec_of(&limit) })
}

/// Sample quantities at the null under data from the alternative.
struct NullTilt {
    tau: Vec<f64>,
    e: Vec<f64>,
    m: f64,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    g0: Vec<DVector<f64>>,
}

fn null_tilt(model: &dyn MomentModel, sample: &Sample, theta0: &[f64]) -> Result<NullTilt> {
    let mm0 = evaluate_moments(model, sample, theta0)?;
    let tau = solve_tau(&mm0)?;
    let n = mm0.n() as f64;
    let r = mm0.r();
    // exp is evaluated unshifted: tau is bounded for feasible problems.
    let g0: Vec<DVector<f64>> = mm0.rows().map(DVector::from_column_slice).collect();
    let e: Vec<f64> = g0.iter().map(|g| g.iter().zip(&tau).map(|(a, b)| a * b).sum::<f64>().exp()).collect();
    let m = e.iter().sum::<f64>() / n;
    let mut a = DMatrix::zeros(r, r);
    let mut b = DMatrix::zeros(r, r);
    for (g, &ei) in g0.iter().zip(&e) {
        let gg = g * g.transpose();
        a += (ei / n) * &gg;
        b += (ei * ei / n) * gg;
    }
    Ok(NullTilt { tau, e, m, a: symmetrize(&a), b: symmetrize(&b), g0 })
}

#[allow(clippy::too_many_arguments)]
fn finish_approx(
    tau: Vec<f64>,
    mu: f64,
    s: DVector<f64>,
    m: DMatrix<f64>,
    f: &PhiFunction,
    p: usize,
    n_eval: usize,
    alpha: f64,
) -> Result<FixedAltApprox> {
    let quadratic = (s.transpose() * &m * &s)[(0, 0)].max(0.0);
    let nu = standardized_point(f.dd1(), p, n_eval, alpha, mu, quadratic)?;
    Ok(FixedAltApprox { tau, mu, s: vec_of(&s), m, quadratic, nu, beta_star: 1.0 - normal_cdf(nu) })
}

/// `sqrt(n) / sqrt(q) (phi''(1) chi2_{p,alpha} / (2n) - mu)`. At the null
/// (`mu = q = 0`) this returns `z_{1-alpha}` so that `1 - Phi(nu) = alpha`.
pub fn standardized_point(dd1: f64, p: usize, n_eval: usize, alpha: f64, mu: f64, quadratic: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_n(n_eval)?;
    let n = n_eval as f64;
    let crit = chi2_quantile(1.0 - alpha, p as f64)?;
    let gap = dd1 * crit / (2.0 * n) - mu;
    Ok(if quadratic > 0.0 {
        n.sqrt() / quadratic.sqrt() * gap
    } else if mu == 0.0 {
        normal_quantile(1.0 - alpha)
    } else if gap > 0.0 {
        f64::INFINITY
    } else if gap < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    })
}

/// Fixed-alternative power approximation for the `T` family. `sample` represents
/// the distribution at `theta_star`; expectations are sample means.
pub fn power_approx_t(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    theta_star: &[f64],
    f: &PhiFunction,
    n_eval: usize,
    alpha: f64,
) -> Result<FixedAltApprox> {
    if theta_star.len() != model.p() {
        return Err(Error::DimensionMismatch { what: "theta_star", expected: model.p(), found: theta_star.len() });
    }
    let nt = null_tilt(model, sample, theta0)?;
    let n = sample.n() as f64;
    let r = model.r();
    let mut mu = 0.0;
    let mut s = DVector::zeros(r);
    for (g, &e) in nt.g0.iter().zip(&nt.e) {
        let x = nt.m / e;
        mu += e * f.phi(x) / n;
        s += (e * f.psi(x) / n) * g;
    }
    mu /= nt.m;
    s /= nt.m;
    let a_inv = spd_inverse(&nt.a).ok_or_else(|| Error::SingularMoments("E[e g g'] is singular".into()))?;
    let m = symmetrize(&(&a_inv * &nt.b * &a_inv));
    finish_approx(nt.tau, mu, s, m, f, model.p(), n_eval, alpha)
}

/// Fixed-alternative power approximation for the `S` family, with the stacked
/// gradient `(s1, s2)` and block covariance `[[S11(theta*), S12], [S12', S22]]`.
pub fn power_approx_s(
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    theta_star: &[f64],
    f: &PhiFunction,
    n_eval: usize,
    alpha: f64,
) -> Result<FixedAltApprox> {
    let nt = null_tilt(model, sample, theta0)?;
    let mm_star = evaluate_moments(model, sample, theta_star)?;
    let blocks = sandwich_blocks(model, sample, theta_star)?;
    let n = sample.n() as f64;
    let r = model.r();
    let mut mu = 0.0;
    let mut dphi_g = DVector::zeros(r);
    let mut psi_g = DVector::zeros(r);
    let mut cross = DMatrix::zeros(r, r);
    for (i, (g0, &e)) in nt.g0.iter().zip(&nt.e).enumerate() {
        let x = nt.m / e;
        let gs = DVector::from_column_slice(mm_star.row(i));
        mu += e * f.phi(x) / n;
        dphi_g += (f.dphi(x) / n) * &gs;
        psi_g += (e * f.psi(x) / n) * g0;
        cross += (e / n) * &gs * g0.transpose();
    }
    mu /= nt.m;
    let a_inv = spd_inverse(&nt.a).ok_or_else(|| Error::SingularMoments("E[e g g'] is singular".into()))?;
    let s1 = -(&blocks.r * dphi_g);
    let s2 = -(&a_inv * psi_g) / nt.m;
    let mut s = DVector::zeros(2 * r);
    s.rows_mut(0, r).copy_from(&s1);
    s.rows_mut(r, r).copy_from(&s2);
    let mut m = DMatrix::zeros(2 * r, 2 * r);
    m.view_mut((0, 0), (r, r)).copy_from(&blocks.s11);
    m.view_mut((0, r), (r, r)).copy_from(&cross);
    m.view_mut((r, 0), (r, r)).copy_from(&cross.transpose());
    m.view_mut((r, r), (r, r)).copy_from(&nt.b);
    finish_approx(nt.tau, mu, s, m, f, model.p(), n_eval, alpha)
}

fn closed_form_check(theta_star: f64) -> Result<()> {
    if !theta_star.is_finite() {
        return Err(Error::DomainError(format!("theta* must be finite, got {theta_star}")));
    }
    Ok(())
}

/// Closed-form `mu` for the builtin model with `delta = 1`, null `theta0 = 0`,
/// data `N(theta*, 1 + theta*^2)` and the power-divergence generator `phi_lambda`.
pub fn closed_form_mu(lambda: f64, theta_star: f64) -> Result<f64> {
    closed_form_check(theta_star)?;
    let s2 = theta_star * theta_star;
    if lambda.abs() < LAMBDA_BRANCH_TOL {
        return Ok(s2 - 0.5 * (1.0 + s2).ln());
    }
    if (lambda + 1.0).abs() < LAMBDA_BRANCH_TOL {
        return Ok(0.5 * (1.0 + s2).ln());
    }
    let c = 1.0 - lambda * s2;
    if !(c > 0.0) {
        return Err(Error::PoleEncountered(c));
    }
    let l1 = lambda * (lambda + 1.0);
    Ok(((l1 * s2 / (2.0 * c)).exp() / (c * (s2 + 1.0).powf(lambda)).sqrt() - 1.0) / l1)
}

/// Closed-form `s' M s` for the `T` family under the setting of `closed_form_mu`.
pub fn closed_form_quadratic(lambda: f64, theta_star: f64) -> Result<f64> {
    closed_form_check(theta_star)?;
    let t = theta_star;
    let s2 = t * t;
    if s2 == 0.0 {
        return Ok(0.0);
    }
    let c = 1.0 - lambda * s2;
    if !(c > 0.0) {
        return Err(Error::PoleEncountered(c));
    }
    let w = 2.0 * s2 + 1.0;
    let pre = s2 * (s2 * (lambda * (lambda + 1.0) / c + 1.0 / w)).exp()
        / (w.powi(5).sqrt() * c.powi(3) * (s2 + 1.0).powf(lambda - 1.0));
    let v = [1.0, (lambda + 2.0) * t];
    let off = -t / w * (s2 * s2 + 3.0 * s2 + 1.0);
    let m11 = 2.0 * s2 * s2 + 4.0 * s2 + 1.0;
    let m22 = (6.0 * s2.powi(4) + 16.0 * s2.powi(3) + 19.0 * s2 * s2 + 8.0 * s2 + 1.0) / (2.0 * w * w);
    Ok(pre * (v[0] * v[0] * m11 + 2.0 * v[0] * v[1] * off + v[1] * v[1] * m22))
}

/// Closed-form power approximation `1 - Phi(nu)` for the builtin model.
pub fn closed_form_beta(lambda: f64, theta_star: f64, n_eval: usize, alpha: f64) -> Result<f64> {
    let mu = closed_form_mu(lambda, theta_star)?;
    let q = closed_form_quadratic(lambda, theta_star)?;
    let nu = standardized_point(1.0, 1, n_eval, alpha, mu, q)?;
    Ok(1.0 - normal_cdf(nu))
}

/// Asymptotic power against contiguous alternatives `theta0 + Delta / sqrt(n)`:
/// `P(chi2_p(delta) > chi2_{p,alpha})` with `delta = Delta' V^-1 Delta`.
pub fn contiguous_power(blocks: &SandwichBlocks, delta: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let p = blocks.v.nrows();
    if delta.len() != p {
        return Err(Error::DimensionMismatch { what: "Delta", expected: p, found: delta.len() });
    }
    let v_inv = spd_inverse(&blocks.v).ok_or(Error::SingularV)?;
    let d = DVector::from_column_slice(delta);
    let ncp = (d.transpose() * v_inv * &d)[(0, 0)].max(0.0);
    let crit = chi2_quantile(1.0 - alpha, p as f64)?;
    noncentral_chi2_sf(crit, p as f64, ncp)
}

/// Estimating-equation function `rho` of the EL, ET or ETEL estimator at one
/// observation. `mean_exp` is `(1/n) sum_j exp(t'g_j)` and is used by ETEL only.
pub fn influence_rho(
    method: EstimatorMethod,
    model: &dyn MomentModel,
    x_row: &[f64],
    theta: &[f64],
    t: &[f64],
    mean_exp: f64,
) -> Result<Vec<f64>> {
    let (p, r) = (model.p(), model.r());
    if theta.len() != p || t.len() != r {
        return Err(Error::DimensionMismatch { what: "theta or t", expected: p + r, found: theta.len() + t.len() });
    }
    let mut g = vec![0.0; r];
    let mut jac = vec![0.0; r * p];
    model.g(x_row, theta, &mut g);
    model.jacobian(x_row, theta, &mut jac);
    let tg: f64 = g.iter().zip(t).map(|(a, b)| a * b).sum();
    let t_g: Vec<f64> = (0..p).map(|k| (0..r).map(|a| t[a] * jac[a * p + k]).sum()).collect();
    let scale = match method {
        EstimatorMethod::EL => {
            let d = 1.0 + tg;
            if d == 0.0 {
                return Err(Error::PoleEncountered(d));
            }
            1.0 / d
        }
        EstimatorMethod::ET => tg.exp(),
        EstimatorMethod::ETEL => tg.exp() - mean_exp,
    };
    Ok(t_g.iter().map(|v| v * scale).collect())
}

/// Second-order influence function of the `S` statistics at a point with
/// moments `g`: `g' S11^-1 S12 V S12' S11^-1 g`.
pub fn if2_s(blocks: &SandwichBlocks, g_at_x: &[f64]) -> Result<f64> {
    Ok(if2_s_paths(blocks, g_at_x)?.0)
}

/// Both evaluation routes of `if2_s`: the direct quadratic form and
/// `IF' V^-1 IF` with `IF = V S12' S11^-1 g`.
pub fn if2_s_paths(blocks: &SandwichBlocks, g_at_x: &[f64]) -> Result<(f64, f64)> {
    let r = blocks.s11.nrows();
    if g_at_x.len() != r {
        return Err(Error::DimensionMismatch { what: "g", expected: r, found: g_at_x.len() });
    }
    let s11_inv = spd_inverse(&blocks.s11).ok_or_else(|| Error::SingularMoments("S11 is singular".into()))?;
    let g = DVector::from_column_slice(g_at_x);
    let h = blocks.s12.transpose() * &s11_inv * &g;
    let direct = (h.transpose() * &blocks.v * &h)[(0, 0)];
    let infl = &blocks.v * &h;
    let v_inv = spd_inverse(&blocks.v).ok_or(Error::SingularV)?;
    let via_if = (infl.transpose() * v_inv * &infl)[(0, 0)];
    Ok((direct, via_if))
}

/// Stacked estimating function `(phi1, phi2, phi3, phi4)` at one observation.
fn joint_function(g: &DVector<f64>, jac: &DMatrix<f64>, beta: &JointPseudoValue) -> DVector<f64> {
    let (r, p) = (jac.nrows(), jac.ncols());
    let t = DVector::from_column_slice(&beta.t);
    let kappa = DVector::from_column_slice(&beta.kappa);
    let tau = beta.tau_scalar;
    let e = t.dot(g).exp();
    let gk = g.dot(&kappa);
    let jt = jac.transpose();
    let phi1 = e * &jt * (&kappa + gk * &t - &t) + tau * &jt * &t;
    let phi2 = (tau - e) * g + e * gk * g;
    let phi3 = e * g;
    let phi4 = e - tau;
    let mut out = DVector::zeros(p + 2 * r + 1);
    out.rows_mut(0, p).copy_from(&phi1);
    out.rows_mut(p, r).copy_from(&phi2);
    out.rows_mut(p + r, r).copy_from(&phi3);
    out[p + 2 * r] = phi4;
    out
}

/// Per-observation stacked functions at `beta`.
fn joint_rows(model: &dyn MomentModel, sample: &Sample, beta: &JointPseudoValue) -> Result<Vec<DVector<f64>>> {
    let mm = evaluate_moments(model, sample, &beta.theta)?;
    let jac = evaluate_jacobians(model, sample, &beta.theta)?;
    Ok((0..mm.n()).map(|i| joint_function(&DVector::from_column_slice(mm.row(i)), &jac.matrix(i), beta)).collect())
}

/// Sample mean of the stacked system at `beta`.
pub fn joint_residual(model: &dyn MomentModel, sample: &Sample, beta: &JointPseudoValue) -> Result<Vec<f64>> {
    let rows = joint_rows(model, sample, beta)?;
    let n = rows.len() as f64;
    let mut s = DVector::zeros(rows[0].len());
    for row in &rows {
        s += row;
    }
    Ok(vec_of(&(s / n)))
}

/// Fits the stacked value from an ETEL estimate: `tau = mean exp(t'g)` and
/// `kappa = -tau (mean e g g')^-1 g_bar` from the second block.
pub fn misspec_fit(model: &dyn MomentModel, sample: &Sample, est: &EstimatorResult) -> Result<JointPseudoValue> {
    if est.method != EstimatorMethod::ETEL {
        return Err(Error::DomainError("misspecification fit requires an ETEL estimate".into()));
    }
    let mm = evaluate_moments(model, sample, &est.theta_hat)?;
    let t = &est.tilt.t;
    let n = mm.n() as f64;
    let r = mm.r();
    let mut tau = 0.0;
    let mut a = DMatrix::zeros(r, r);
    for g in mm.rows() {
        let gv = DVector::from_column_slice(g);
        let e = gv.iter().zip(t).map(|(x, y)| x * y).sum::<f64>().exp();
        tau += e / n;
        a += (e / n) * &gv * gv.transpose();
    }
    let gbar = DVector::from_vec(mean_moments(&mm));
    let a_inv =
        spd_inverse(&symmetrize(&a)).ok_or_else(|| Error::SingularMoments("kappa system is singular".into()))?;
    let kappa = -tau * a_inv * gbar;
    Ok(JointPseudoValue { theta: est.theta_hat.clone(), t: t.clone(), kappa: vec_of(&kappa), tau_scalar: tau })
}

/// `Gamma` by central differences of the mean stacked system, `Phi` as its
/// mean outer product and `Sigma_theta` as the leading block of the sandwich.
pub fn misspec_sandwich(model: &dyn MomentModel, sample: &Sample, beta: &JointPseudoValue) -> Result<MisspecLaw> {
    let (p, r) = (model.p(), model.r());
    let dim = p + 2 * r + 1;
    let b0 = beta.to_vec();
    if b0.len() != dim {
        return Err(Error::DimensionMismatch { what: "beta", expected: dim, found: b0.len() });
    }
    let rows = joint_rows(model, sample, beta)?;
    let n = rows.len() as f64;
    let mut phi = DMatrix::zeros(dim, dim);
    for row in &rows {
        phi += row * row.transpose() / n;
    }
    let phi = symmetrize(&phi);
    let mut gamma = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let h = fd_step(b0[j]);
        let mut plus = b0.clone();
        let mut minus = b0.clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = joint_residual(model, sample, &JointPseudoValue::from_slice(&plus, p, r)?)?;
        let fm = joint_residual(model, sample, &JointPseudoValue::from_slice(&minus, p, r)?)?;
        for i in 0..dim {
            gamma[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let g_inv = general_inverse(&gamma).ok_or(Error::SingularGamma)?;
    let full = &g_inv * &phi * g_inv.transpose();
    let sigma_theta = symmetrize(&full.view((0, 0), (p, p)).into_owned());
    Ok(MisspecLaw { gamma, phi, sigma_theta, r_or_q: None, mu_star: None, nu: None, beta_star: None })
}

/// Moments and ET tilt at `theta`.
fn et_state(model: &dyn MomentModel, sample: &Sample, theta: &[f64]) -> Result<(MomentMatrix, TiltSolution)> {
    let mm = evaluate_moments(model, sample, theta)?;
    let tilt = solve_et_multiplier(&mm, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    Ok((mm, tilt))
}

/// Completes the misspecification law with the gradient vector, `mu*`, `nu` and
/// `beta*` of the chosen family. The pseudo-true value is `beta.theta`; the
/// mean is `limit(theta0) - limit(theta*)` for `T` and `G2`.
#[allow(clippy::too_many_arguments)]
pub fn misspec_power(
    family: MisspecFamily,
    model: &dyn MomentModel,
    sample: &Sample,
    theta0: &[f64],
    beta: &JointPseudoValue,
    f: &PhiFunction,
    n_eval: usize,
    alpha: f64,
) -> Result<MisspecLaw> {
    let mut law = misspec_sandwich(model, sample, beta)?;
    let theta_star = &beta.theta;
    let (mm_s, tilt_s) = et_state(model, sample, theta_star)?;
    let (mm_0, tilt_0) = et_state(model, sample, theta0)?;
    let u = vec![1.0 / sample.n() as f64; sample.n()];
    let (vector, mu, dd1) = match family {
        MisspecFamily::T => {
            let grad = dphi_u_gradient(&mm_s, &tilt_s, model, sample, theta_star, f)?;
            let mu =
                crate::divergence::d_phi(&u, &tilt_0.weights, f)? - crate::divergence::d_phi(&u, &tilt_s.weights, f)?;
            (grad.limit, mu, f.dd1())
        }
        MisspecFamily::S => {
            let grad = dphi_pp_gradient(&mm_s, &tilt_s, model, sample, theta_star, theta0, f)?;
            let mu = crate::divergence::d_phi(&tilt_s.weights, &tilt_0.weights, f)?;
            (grad.limit, mu, f.dd1())
        }
        MisspecFamily::G2 => {
            let k = kullback_phi();
            let grad = dphi_u_gradient(&mm_s, &tilt_s, model, sample, theta_star, &k)?;
            let log_mean_exp = |mm: &MomentMatrix, t: &[f64]| crate::tilting::et_log_dual(mm, t);
            let mean_tg =
                |mm: &MomentMatrix, t: &[f64]| -> f64 { mean_moments(mm).iter().zip(t).map(|(a, b)| a * b).sum() };
            let mu = log_mean_exp(&mm_0, &tilt_0.t) - log_mean_exp(&mm_s, &tilt_s.t) + mean_tg(&mm_s, &tilt_s.t)
                - mean_tg(&mm_0, &tilt_0.t);
            (grad.limit, mu, k.dd1())
        }
    };
    let v = DVector::from_column_slice(&vector);
    let quadratic = (v.transpose() * &law.sigma_theta * &v)[(0, 0)].max(0.0);
    let nu = standardized_point(dd1, model.p(), n_eval, alpha, mu, quadratic)?;
    law.r_or_q = Some(vector);
    law.mu_star = Some(mu);
    law.nu = Some(nu);
    law.beta_star = Some(1.0 - normal_cdf(nu));
    Ok(law)
}
