//! Inner solvers for the EL and ET Lagrange multipliers, implied probabilities
//! and the ETEL profile log-likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_solve;
use crate::model::MomentMatrix;

/// Default convergence tolerance of the inner solvers.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration budget of the inner solvers.
pub const DEFAULT_MAX_ITER: usize = 100;
/// Multipliers larger than this (sup norm) signal that zero is outside the hull.
pub const HULL_T_LIMIT: f64 = 1e6;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Which implied-probability family a tilt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TiltMethod {
    /// Empirical likelihood weights `(1/n) / (1 + t'g_i)`.
    EL,
    /// Exponential tilting weights `exp(t'g_i) / sum_j exp(t'g_j)`.
    ET,
}

/// Multiplier, implied probabilities and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltSolution {
    /// Lagrange multiplier.
    pub t: Vec<f64>,
    /// Implied probabilities, strictly positive and summing to one.
    pub weights: Vec<f64>,
    /// Weight family.
    pub method: TiltMethod,
    /// Newton iterations performed.
    pub iterations: usize,
    /// Sup norm of `sum_i p_i g_i` at `t`.
    pub residual_norm: f64,
    /// Whether `residual_norm <= tol` was reached.
    pub converged: bool,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Log-domain summary of `exp(t'g_i)`: shift, shifted values and their sum.
struct ExpSums {
    shift: f64,
    w: Vec<f64>,
    total: f64,
}

impl ExpSums {
    fn new(mm: &MomentMatrix, t: &[f64]) -> Self {
        let s: Vec<f64> = mm.rows().map(|g| dot(t, g)).collect();
        let shift = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = s.iter().map(|v| (v - shift).exp()).collect();
        let total = w.iter().sum();
        Self { shift, w, total }
    }

    /// `log K(t) = log((1/n) sum exp(t'g_i))`.
    fn log_k(&self, n: usize) -> f64 {
        self.shift + (self.total / n as f64).ln()
    }
}

/// ET implied probabilities `exp(t'g_i) / sum_j exp(t'g_j)`, computed with a max shift.
pub fn et_weights(mm: &MomentMatrix, t: &[f64]) -> Vec<f64> {
    let e = ExpSums::new(mm, t);
    e.w.iter().map(|w| w / e.total).collect()
}

/// `(1/n) sum exp(t'g_i)` in log form, i.e. `log K(t)`.
pub fn et_log_dual(mm: &MomentMatrix, t: &[f64]) -> f64 {
    ExpSums::new(mm, t).log_k(mm.n())
}

/// Weighted first and second moments `sum p_i g_i` and `sum p_i g_i g_i'`.
fn weighted_moments(mm: &MomentMatrix, w: &[f64], total: f64) -> (DVector<f64>, DMatrix<f64>) {
    let r = mm.r();
    let mut m1 = DVector::zeros(r);
    let mut m2 = DMatrix::zeros(r, r);
    for (g, &wi) in mm.rows().zip(w) {
        let p = wi / total;
        for a in 0..r {
            m1[a] += p * g[a];
            for b in a..r {
                m2[(a, b)] += p * g[a] * g[b];
            }
        }
    }
    for a in 0..r {
        for b in 0..a {
            m2[(a, b)] = m2[(b, a)];
        }
    }
    (m1, m2)
}

/// Index of a moment coordinate with the same strict sign on every row. Such a
/// coordinate keeps zero out of the convex hull.
fn one_signed_coordinate(mm: &MomentMatrix) -> Option<usize> {
    (0..mm.r()).find(|&a| mm.rows().all(|g| g[a] > 0.0) || mm.rows().all(|g| g[a] < 0.0))
}

/// Solves for the ET multiplier by damped Newton on the convex dual
/// `K(t) = (1/n) sum exp(t'g_i)`, starting from `t = 0`.
///
/// A Hessian that is singular at the start is reported as `SingularMoments`;
/// a Hessian that degenerates later (weights collapsing onto a face of the hull)
/// is reported as `HullFailure`.
pub fn solve_et_multiplier(mm: &MomentMatrix, tol: f64, max_iter: usize) -> Result<TiltSolution> {
    if !(tol > 0.0) {
        return Err(Error::DomainError(format!("tolerance must be positive, got {tol}")));
    }
    let n = mm.n();
    let r = mm.r();
    if let Some(a) = one_signed_coordinate(mm) {
        return Err(Error::HullFailure(format!("moment {a} has constant sign")));
    }
    // Feasibility implies min log K = -KL(p_ET, u) >= -ln n.
    let log_k_floor = -(n as f64).ln() - 1e-9;
    let mut t = vec![0.0; r];
    let mut cur = ExpSums::new(mm, &t);
    for iter in 0..=max_iter {
        let (grad, hess) = weighted_moments(mm, &cur.w, cur.total);
        let residual = sup_norm(grad.as_slice());
        if residual <= tol {
            let weights = cur.w.iter().map(|w| w / cur.total).collect();
            return Ok(TiltSolution {
                t,
                weights,
                method: TiltMethod::ET,
                iterations: iter,
                residual_norm: residual,
                converged: true,
            });
        }
        if iter == max_iter {
            break;
        }
        let dir = match spd_solve(&hess, &grad) {
            Some(d) => -d,
            None if iter == 0 => {
                return Err(Error::SingularMoments("ET dual Hessian singular at t = 0".into()));
            }
            None => {
                return Err(Error::HullFailure("ET weights degenerate (zero on the hull boundary)".into()));
            }
        };
        // Armijo on K, expressed as a ratio to K(t) so that the max shift cancels.
        let slope = grad.dot(&dir);
        let log_k = cur.log_k(n);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = t.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
            let next = ExpSums::new(mm, &trial);
            let bound = ARMIJO_C * alpha * slope;
            // Below rounding of log K the decrease is invisible; take the Newton step.
            let negligible = alpha == 1.0 && -slope <= 64.0 * f64::EPSILON * (1.0 + log_k.abs());
            if negligible || (bound > -1.0 && next.log_k(n) - log_k <= bound.ln_1p()) {
                accepted = Some((trial, next));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            return Err(Error::HullFailure("ET line search made no progress".into()));
        };
        t = trial;
        cur = next;
        if cur.log_k(n) < log_k_floor {
            return Err(Error::HullFailure("ET dual fell below -ln n".into()));
        }
        if sup_norm(&t) > HULL_T_LIMIT {
            return Err(Error::HullFailure("ET multiplier diverged".into()));
        }
    }
    Err(Error::HullFailure(format!("ET solver reached {max_iter} iterations without convergence")))
}

/// EL objective `-(1/n) sum log(1 + t'g_i)`, or `None` if some `1 + t'g_i < 1/n`.
fn el_objective(mm: &MomentMatrix, t: &[f64]) -> Option<f64> {
    let n = mm.n() as f64;
    let floor = 1.0 / n;
    let mut s = 0.0;
    for g in mm.rows() {
        let d = 1.0 + dot(t, g);
        if !(d >= floor) {
            return None;
        }
        s += d.ln();
    }
    Some(-s / n)
}

/// Solves `(1/n) sum g_i / (1 + t'g_i) = 0` by Newton with step halving that keeps
/// `1 + t'g_i >= 1/n`, starting from `t = 0`.
///
/// The weights `(1/n) / (1 + t'g_i)` are renormalized to absorb the solver residual.
pub fn solve_el_multiplier(mm: &MomentMatrix, tol: f64, max_iter: usize) -> Result<TiltSolution> {
    if !(tol > 0.0) {
        return Err(Error::DomainError(format!("tolerance must be positive, got {tol}")));
    }
    let n = mm.n();
    let nf = n as f64;
    let r = mm.r();
    if let Some(a) = one_signed_coordinate(mm) {
        return Err(Error::HullFailure(format!("moment {a} has constant sign")));
    }
    let mut t = vec![0.0; r];
    let mut f = 0.0_f64;
    for iter in 0..=max_iter {
        // Residual (1/n) sum g/d and Hessian (1/n) sum g g'/d^2.
        let mut res = DVector::zeros(r);
        let mut hess = DMatrix::zeros(r, r);
        for g in mm.rows() {
            let d = 1.0 + dot(&t, g);
            for a in 0..r {
                res[a] += g[a] / d / nf;
                for b in a..r {
                    hess[(a, b)] += g[a] * g[b] / (d * d) / nf;
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        let residual = sup_norm(res.as_slice());
        if residual <= tol {
            let raw: Vec<f64> = mm.rows().map(|g| 1.0 / (nf * (1.0 + dot(&t, g)))).collect();
            let total: f64 = raw.iter().sum();
            let weights = raw.iter().map(|w| w / total).collect();
            return Ok(TiltSolution {
                t,
                weights,
                method: TiltMethod::EL,
                iterations: iter,
                residual_norm: residual,
                converged: true,
            });
        }
        if iter == max_iter {
            break;
        }
        // Gradient of the objective is -res; Newton direction solves hess * dir = res.
        let dir = match spd_solve(&hess, &res) {
            Some(d) => d,
            None if iter == 0 => {
                return Err(Error::SingularMoments("EL Hessian singular at t = 0".into()));
            }
            None => return Err(Error::HullFailure("EL Hessian degenerate".into())),
        };
        let slope = -res.dot(&dir);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = t.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Some(ft) = el_objective(mm, &trial) {
                let negligible = alpha == 1.0 && -slope <= 64.0 * f64::EPSILON * (1.0 + f.abs());
                if negligible || ft <= f + ARMIJO_C * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            return Err(Error::HullFailure("EL step halving made no progress".into()));
        };
        t = trial;
        f = ft;
        if sup_norm(&t) > HULL_T_LIMIT {
            return Err(Error::HullFailure("EL multiplier diverged".into()));
        }
    }
    Err(Error::HullFailure(format!("EL solver reached {max_iter} iterations without convergence")))
}

/// Solves the multiplier of the requested family.
pub fn solve_multiplier(method: TiltMethod, mm: &MomentMatrix, tol: f64, max_iter: usize) -> Result<TiltSolution> {
    match method {
        TiltMethod::EL => solve_el_multiplier(mm, tol, max_iter),
        TiltMethod::ET => solve_et_multiplier(mm, tol, max_iter),
    }
}

/// ETEL profile log-likelihood `-log((1/n) sum exp(t'(g_i - g_bar)))` for a given ET multiplier.
pub fn etel_loglik_at(mm: &MomentMatrix, t: &[f64]) -> f64 {
    let gbar = crate::model::mean_moments(mm);
    -(et_log_dual(mm, t) - dot(t, &gbar))
}

/// ETEL profile log-likelihood at the ET multiplier of `mm`.
pub fn etel_loglik(mm: &MomentMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    let sol = solve_et_multiplier(mm, tol, max_iter)?;
    Ok(etel_loglik_at(mm, &sol.t))
}
