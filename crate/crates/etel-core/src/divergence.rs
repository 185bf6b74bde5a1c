//! Convex divergence generators, the power-divergence family, (h, phi) wrappers
//! and divergences between discrete probability vectors.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Distance from `0` or `-1` below which the power-divergence limit branches are used.
pub const LAMBDA_BRANCH_TOL: f64 = 1e-8;

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A convex generator `phi` with `phi(1) = 0`, its derivative, `phi''(1)` and
/// the boundary limits needed for zero weights.
#[derive(Clone)]
pub struct PhiFunction {
    phi: RealFn,
    dphi: RealFn,
    dd1: f64,
    phi_at_zero: f64,
    slope_at_infinity: f64,
    label: String,
}

impl fmt::Debug for PhiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiFunction").field("label", &self.label).field("dd1", &self.dd1).finish()
    }
}

impl PhiFunction {
    /// Custom generator. `phi_at_zero` is `lim_{x->0} phi(x)` and
    /// `slope_at_infinity` is `lim_{x->inf} phi(x)/x`; either may be `+inf`.
    pub fn new<F, D>(
        phi: F,
        dphi: D,
        dd1: f64,
        phi_at_zero: f64,
        slope_at_infinity: f64,
        label: impl Into<String>,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(dd1 > 0.0 && dd1.is_finite()) {
            return Err(Error::DomainError(format!("phi''(1) must be positive, got {dd1}")));
        }
        Ok(Self { phi: Arc::new(phi), dphi: Arc::new(dphi), dd1, phi_at_zero, slope_at_infinity, label: label.into() })
    }

    /// `phi(x)`, with the limit value at `x = 0`.
    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        if x == 0.0 {
            self.phi_at_zero
        } else {
            (self.phi)(x)
        }
    }

    /// `phi'(x)`.
    #[inline]
    pub fn dphi(&self, x: f64) -> f64 {
        (self.dphi)(x)
    }

    /// `phi''(1)`.
    pub fn dd1(&self) -> f64 {
        self.dd1
    }

    /// `psi(x) = phi(x) - x phi'(x)`.
    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        self.phi(x) - x * self.dphi(x)
    }

    /// `lim_{x->0} phi(x)`.
    pub fn phi_at_zero(&self) -> f64 {
        self.phi_at_zero
    }

    /// `lim_{x->inf} phi(x) / x`.
    pub fn slope_at_infinity(&self) -> f64 {
        self.slope_at_infinity
    }

    /// Descriptor.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// `c * phi` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::DomainError(format!("scale must be positive, got {c}")));
        }
        let (phi, dphi) = (self.phi.clone(), self.dphi.clone());
        Ok(Self {
            phi: Arc::new(move |x| c * phi(x)),
            dphi: Arc::new(move |x| c * dphi(x)),
            dd1: c * self.dd1,
            phi_at_zero: c * self.phi_at_zero,
            slope_at_infinity: c * self.slope_at_infinity,
            label: format!("{}*{}", c, self.label),
        })
    }
}

/// Power-divergence generator `phi_lambda`, with the `x log x - x + 1` and
/// `-log x + x - 1` limits at `lambda = 0` and `lambda = -1`.
pub fn power_divergence_phi(lambda: f64) -> PhiFunction {
    let label = format!("power-divergence(lambda={lambda})");
    if lambda.abs() < LAMBDA_BRANCH_TOL {
        return PhiFunction {
            phi: Arc::new(|x: f64| x * x.ln() - x + 1.0),
            dphi: Arc::new(|x: f64| x.ln()),
            dd1: 1.0,
            phi_at_zero: 1.0,
            slope_at_infinity: f64::INFINITY,
            label,
        };
    }
    if (lambda + 1.0).abs() < LAMBDA_BRANCH_TOL {
        return PhiFunction {
            phi: Arc::new(|x: f64| -x.ln() + x - 1.0),
            dphi: Arc::new(|x: f64| 1.0 - 1.0 / x),
            dd1: 1.0,
            phi_at_zero: f64::INFINITY,
            slope_at_infinity: 1.0,
            label,
        };
    }
    let l = lambda;
    let denom = l * (l + 1.0);
    let phi_at_zero = if l + 1.0 > 0.0 { 1.0 / (l + 1.0) } else { f64::INFINITY };
    let slope_at_infinity = if l > 0.0 { f64::INFINITY } else { -1.0 / l };
    PhiFunction {
        phi: Arc::new(move |x: f64| (x.powf(l + 1.0) - x - l * (x - 1.0)) / denom),
        dphi: Arc::new(move |x: f64| ((l + 1.0) * x.powf(l) - 1.0 - l) / denom),
        dd1: 1.0,
        phi_at_zero,
        slope_at_infinity,
        label,
    }
}

/// Kullback generator `x log x - x + 1`.
pub fn kullback_phi() -> PhiFunction {
    let mut f = power_divergence_phi(0.0);
    f.label = "kullback".into();
    f
}

/// `phi(x) - (x - 1) phi'(1)`: same divergence on probability vectors, zero slope at 1.
pub fn normalize_phi(f: &PhiFunction) -> PhiFunction {
    let d1 = f.dphi(1.0);
    if d1 == 0.0 {
        return f.clone();
    }
    let (phi, dphi) = (f.phi.clone(), f.dphi.clone());
    PhiFunction {
        phi: Arc::new(move |x| phi(x) - (x - 1.0) * d1),
        dphi: Arc::new(move |x| dphi(x) - d1),
        dd1: f.dd1,
        phi_at_zero: f.phi_at_zero + d1,
        slope_at_infinity: f.slope_at_infinity - d1,
        label: format!("normalized({})", f.label),
    }
}

fn check_probability(v: &[f64]) -> Result<()> {
    for (index, &value) in v.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::NonpositiveWeight { index, value });
        }
    }
    Ok(())
}

/// `D_phi(u, p) = sum p_i phi(u_i / p_i)`.
///
/// Zero entries follow `0 phi(0/0) = 0` and `0 phi(u/0) = u lim phi(x)/x`;
/// the result is `+inf` where that limit diverges.
pub fn d_phi(u: &[f64], p: &[f64], f: &PhiFunction) -> Result<f64> {
    if u.len() != p.len() {
        return Err(Error::LengthMismatch { left: u.len(), right: p.len() });
    }
    check_probability(u)?;
    check_probability(p)?;
    let mut s = 0.0;
    for (&ui, &pi) in u.iter().zip(p) {
        s += match (ui == 0.0, pi == 0.0) {
            (true, true) => 0.0,
            (false, true) => ui * f.slope_at_infinity,
            _ => pi * f.phi(ui / pi),
        };
    }
    Ok(s)
}

/// An increasing `h` with `h(0) = 0` and `h'(0) > 0`, defined on `[0, upper)`.
#[derive(Clone)]
pub struct HFunction {
    h: Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>,
    dh0: f64,
    label: String,
}

impl fmt::Debug for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HFunction").field("label", &self.label).field("dh0", &self.dh0).finish()
    }
}

impl HFunction {
    /// Custom `h`; the closure reports domain violations itself.
    pub fn new<H>(h: H, dh0: f64, label: impl Into<String>) -> Result<Self>
    where
        H: Fn(f64) -> Result<f64> + Send + Sync + 'static,
    {
        if !(dh0 > 0.0 && dh0.is_finite()) {
            return Err(Error::InvalidOrder(format!("h'(0) must be positive, got {dh0}")));
        }
        Ok(Self { h: Arc::new(h), dh0, label: label.into() })
    }

    /// Identity `h(x) = x`.
    pub fn identity() -> Self {
        Self { h: Arc::new(Ok), dh0: 1.0, label: "identity".into() }
    }

    /// `h(x)`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        (self.h)(x)
    }

    /// `h'(0)`.
    pub fn dh0(&self) -> f64 {
        self.dh0
    }

    /// Descriptor.
    pub fn label(&self) -> &str {
        &self.label
    }
}

fn check_order(a: f64) -> Result<()> {
    if !a.is_finite() || a == 0.0 || a == 1.0 {
        return Err(Error::InvalidOrder(format!("order a = {a} must be finite and not 0 or 1")));
    }
    Ok(())
}

/// `log(1 + a(a-1)x)`, accurate for small `x`.
fn log_order_base(a: f64, x: f64) -> Result<f64> {
    let z = a * (a - 1.0) * x;
    if !(z > -1.0) {
        return Err(Error::DomainError(format!("1 + a(a-1)x = {} must be positive", 1.0 + z)));
    }
    Ok(z.ln_1p())
}

/// Renyi wrapper `h(x) = log(a(a-1)x + 1) / (a(a-1))`, with `h'(0) = 1`.
pub fn renyi_h(a: f64) -> Result<HFunction> {
    check_order(a)?;
    let c = a * (a - 1.0);
    Ok(HFunction { h: Arc::new(move |x| Ok(log_order_base(a, x)? / c)), dh0: 1.0, label: format!("renyi(a={a})") })
}

/// Sharma-Mittal wrapper `h(x) = ([1 + a(a-1)x]^((b-1)/(a-1)) - 1) / (b-1)`, with `h'(0) = a`.
pub fn sharma_mittal_h(a: f64, b: f64) -> Result<HFunction> {
    check_order(a)?;
    if !b.is_finite() || b == 1.0 {
        return Err(Error::InvalidOrder(format!("order b = {b} must be finite and not 1")));
    }
    let k = (b - 1.0) / (a - 1.0);
    Ok(HFunction {
        h: Arc::new(move |x| Ok((k * log_order_base(a, x)?).exp_m1() / (b - 1.0))),
        dh0: a,
        label: format!("sharma-mittal(a={a}, b={b})"),
    })
}

/// `h(D_phi(u, p))`.
pub fn hphi_divergence(u: &[f64], p: &[f64], f: &PhiFunction, h: &HFunction) -> Result<f64> {
    h.eval(d_phi(u, p, f)?)
}
