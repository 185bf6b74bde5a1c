//! Chi-squared, noncentral chi-squared and standard normal distribution functions.

use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Target accuracy of `chi2_quantile` on the probability scale.
pub const QUANTILE_TOL: f64 = 1e-10;
/// Remaining Poisson mass at which the noncentral series is truncated.
pub const NONCENTRAL_TAIL: f64 = 1e-12;

fn check_df(k: f64) -> Result<()> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::DomainError(format!("degrees of freedom must be positive, got {k}")));
    }
    Ok(())
}

/// `P(chi2_k <= x)` via the regularized lower incomplete gamma function.
pub fn chi2_cdf(x: f64, k: f64) -> Result<f64> {
    check_df(k)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::DomainError(format!("chi2_cdf requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_lr(k / 2.0, x / 2.0))
}

/// `P(chi2_k > x)`, computed directly for tail accuracy.
pub fn chi2_sf(x: f64, k: f64) -> Result<f64> {
    check_df(k)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::DomainError(format!("chi2_sf requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(k / 2.0, x / 2.0))
}

fn chi2_pdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let h = k / 2.0;
    ((h - 1.0) * x.ln() - x / 2.0 - h * std::f64::consts::LN_2 - ln_gamma(h)).exp()
}

/// Quantile of `chi2_k` by safeguarded Newton inside a shrinking bracket.
pub fn chi2_quantile(q: f64, k: f64) -> Result<f64> {
    check_df(k)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::DomainError(format!("chi2_quantile requires q in (0, 1), got {q}")));
    }
    let (mut lo, mut hi) = (0.0_f64, k.max(1.0));
    while chi2_cdf(hi, k)? < q {
        lo = hi;
        hi *= 2.0;
    }
    // Wilson-Hilferty start, clipped to the bracket.
    let z = normal_quantile(q);
    let c = 2.0 / (9.0 * k);
    let mut x = (k * (1.0 - c + z * c.sqrt()).powi(3)).clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = chi2_cdf(x, k)? - q;
        if f.abs() <= QUANTILE_TOL * 1e-2 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = chi2_pdf(x, k);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    if (chi2_cdf(x, k)? - q).abs() <= QUANTILE_TOL {
        Ok(x)
    } else {
        Err(Error::DomainError(format!("chi2_quantile failed to reach tolerance at q = {q}")))
    }
}

/// Poisson weights `Pois(j; lambda)` covering all but `NONCENTRAL_TAIL` of the mass.
fn poisson_terms(lambda: f64) -> Vec<(usize, f64)> {
    if lambda == 0.0 {
        return vec![(0, 1.0)];
    }
    let mode = lambda.floor() as usize;
    let log_w = |j: usize| -lambda + j as f64 * lambda.ln() - ln_gamma(j as f64 + 1.0);
    let mut terms = Vec::new();
    let mut total = 0.0;
    let mut down = mode as isize;
    let mut up = mode + 1;
    loop {
        let wd = if down >= 0 { log_w(down as usize).exp() } else { 0.0 };
        let wu = log_w(up).exp();
        if down >= 0 {
            terms.push((down as usize, wd));
            total += wd;
            down -= 1;
        }
        terms.push((up, wu));
        total += wu;
        up += 1;
        let exhausted_down = down < 0 || wd < 1e-300;
        if 1.0 - total < NONCENTRAL_TAIL && (exhausted_down || wd < NONCENTRAL_TAIL * 1e-3) {
            break;
        }
        if up > mode + 100_000 {
            break;
        }
    }
    terms
}

fn check_ncp(ncp: f64) -> Result<()> {
    if !(ncp >= 0.0 && ncp.is_finite()) {
        return Err(Error::DomainError(format!("noncentrality must be >= 0, got {ncp}")));
    }
    Ok(())
}

/// Noncentral chi-squared CDF as a Poisson mixture of central CDFs.
pub fn noncentral_chi2_cdf(x: f64, k: f64, ncp: f64) -> Result<f64> {
    check_ncp(ncp)?;
    chi2_cdf(x, k)?;
    let mut s = 0.0;
    for (j, w) in poisson_terms(ncp / 2.0) {
        s += w * chi2_cdf(x, k + 2.0 * j as f64)?;
    }
    Ok(s.clamp(0.0, 1.0))
}

/// Noncentral chi-squared survival function, summed from central tails.
pub fn noncentral_chi2_sf(x: f64, k: f64, ncp: f64) -> Result<f64> {
    check_ncp(ncp)?;
    chi2_sf(x, k)?;
    let mut s = 0.0;
    for (j, w) in poisson_terms(ncp / 2.0) {
        s += w * chi2_sf(x, k + 2.0 * j as f64)?;
    }
    Ok(s.clamp(0.0, 1.0))
}

/// Standard normal CDF, `erfc(-x / sqrt 2) / 2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation refined by one Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    #[allow(clippy::excessive_precision)]
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement against the erfc-based CDF, using the smaller tail.
    let e = if x <= 0.0 { normal_cdf(x) - p } else { (1.0 - p) - normal_cdf(-x) };
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_basics() {
        assert_eq!(chi2_cdf(0.0, 3.0).unwrap(), 0.0);
        assert!((chi2_quantile(0.95, 1.0).unwrap() - 3.8415).abs() < 1e-4);
        assert!((chi2_quantile(0.95, 1.0).unwrap() - 3.841458820694124).abs() < 1e-9);
        for &(q, k) in &[(0.01, 1.0), (0.5, 2.0), (0.999, 5.0), (1e-6, 3.0)] {
            let x = chi2_quantile(q, k).unwrap();
            assert!((chi2_cdf(x, k).unwrap() - q).abs() < 1e-10);
        }
        assert!(chi2_cdf(-1.0, 1.0).is_err());
        assert!(chi2_quantile(1.0, 1.0).is_err());
        assert!(chi2_cdf(1.0, 0.0).is_err());
    }

    #[test]
    fn noncentral_reduces_to_central() {
        for x in [0.1, 1.0, 3.84, 10.0] {
            let a = noncentral_chi2_cdf(x, 2.0, 0.0).unwrap();
            assert!((a - chi2_cdf(x, 2.0).unwrap()).abs() < 1e-15);
        }
        assert!((noncentral_chi2_cdf(1e4, 1.0, 4.0).unwrap() - 1.0).abs() < 1e-12);
        let c = noncentral_chi2_cdf(3.8415, 1.0, 1.0).unwrap();
        let s = noncentral_chi2_sf(3.8415, 1.0, 1.0).unwrap();
        assert!((c + s - 1.0).abs() < 1e-11);
        // Large noncentrality exercises both directions of the series.
        let big = noncentral_chi2_cdf(500.0, 3.0, 480.0).unwrap();
        assert!(big > 0.5 && big < 0.9);
    }

    #[test]
    fn normal_functions() {
        assert_eq!(normal_cdf(0.0), 0.5);
        for x in [0.3, 1.0, 2.5, 6.0] {
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-14);
        }
        assert!((normal_cdf(1.6449) - 0.95).abs() < 1e-4);
        for p in [1e-12, 1e-5, 0.02, 0.3, 0.5, 0.8, 0.99, 1.0 - 1e-9] {
            let x = normal_quantile(p);
            let back = if x < 0.0 { normal_cdf(x) - p } else { (1.0 - normal_cdf(-x)) - p };
            assert!(back.abs() < 1e-12 * p.min(1.0 - p).max(1e-4), "p = {p}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }
}
