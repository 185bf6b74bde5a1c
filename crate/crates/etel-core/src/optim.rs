//! Derivative-free minimizers: bracketing plus Brent for scalars, Nelder-Mead for vectors,
//! and a BFGS routine for smooth objectives with analytic gradients.
//!
//! Objectives may return `+inf` (or NaN, treated as `+inf`) to mark infeasible points.

const GOLDEN: f64 = 0.381_966_011_250_105_1;
const EXPAND: f64 = 1.618_033_988_749_895;
const MAX_EXPANSIONS: usize = 100;

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    /// Minimizer.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub value: f64,
    /// Iterations used.
    pub iterations: usize,
    /// Whether the stopping tolerance was met.
    pub converged: bool,
}

#[inline]
fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Finds `a < b < c` with `f(b) <= min(f(a), f(c))` by downhill expansion from `x0`,
/// clipped to `[lo, hi]`. Returns the bracket and its objective values.
pub fn bracket_minimum<F: FnMut(f64) -> f64>(
    f: &mut F,
    x0: f64,
    step: f64,
    lo: f64,
    hi: f64,
) -> ((f64, f64, f64), (f64, f64, f64)) {
    let fx0 = clean(f(x0));
    let mut a = x0;
    let mut fa = fx0;
    let mut b = (x0 + step).min(hi);
    let mut fb = clean(f(b));
    if fb > fa {
        // Search the other direction.
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let dir = if b >= a { 1.0 } else { -1.0 };
    let mut width = (b - a).abs().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_EXPANSIONS {
        width *= EXPAND;
        let c = (b + dir * width).clamp(lo, hi);
        let fc = clean(f(c));
        if fc >= fb || c == lo || c == hi {
            let (l, fl, r, fr) = if a < c { (a, fa, c, fc) } else { (c, fc, a, fa) };
            if fc < fb {
                // Hit the domain edge while still decreasing.
                return ((l.min(b), b, r.max(b)), (fl, fc, fr));
            }
            return ((l, b, r), (fl, fb, fr));
        }
        a = b;
        fa = fb;
        b = c;
        fb = fc;
    }
    let c = (b + dir * width * EXPAND).clamp(lo, hi);
    let fc = clean(f(c));
    if a < c {
        ((a, b, c), (fa, fb, fc))
    } else {
        ((c, b, a), (fc, fb, fa))
    }
}

/// Brent's minimization on `[a, c]` starting from interior point `b`.
/// Parabolic steps are used only when all three fitted values are finite.
pub fn brent<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, c: f64, xtol: f64, max_iter: usize) -> Minimum {
    let (mut lo, mut hi) = if a < c { (a, c) } else { (c, a) };
    let mut x = b.clamp(lo, hi);
    let mut fx = clean(f(x));
    let (mut w, mut v) = (x, x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for iter in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let tol1 = xtol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (hi - lo) {
            return Minimum { x: vec![x], value: fx, iterations: iter, converged: true };
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { lo - x } else { hi - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = clean(f(u));
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum { x: vec![x], value: fx, iterations: max_iter, converged: false }
}

/// Nelder-Mead with reflection 1, expansion 2, contraction 0.5 and shrink 0.5.
/// Stops when the simplex diameter (sup norm) falls below `xtol`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    step: &[f64],
    xtol: f64,
    max_iter: usize,
) -> Minimum {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] += step[k];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| clean(f(v))).collect();
    for iter in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if diameter <= xtol && values[0].is_finite() {
            return Minimum { x: simplex[0].clone(), value: values[0], iterations: iter, converged: true };
        }
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = clean(f(&xr));
        if fr < values[0] {
            let xe = along(2.0);
            let fe = clean(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(0.5);
                let fc = clean(f(&xc));
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = clean(f(&xc));
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = best.iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    values[i] = clean(f(&simplex[i]));
                }
            }
        }
    }
    let best = (0..=n).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap_or(0);
    Minimum { x: simplex[best].clone(), value: values[best], iterations: max_iter, converged: false }
}

/// BFGS with backtracking line search. `fg` returns the value and gradient, or
/// `None` where the objective is infeasible.
pub fn bfgs<F>(fg: &mut F, x0: &[f64], xtol: f64, max_iter: usize) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut gx) = fg(&x)?;
    let mut h = nalgebra::DMatrix::<f64>::identity(n, n);
    for iter in 0..max_iter {
        let g = nalgebra::DVector::from_column_slice(&gx);
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = nalgebra::DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Some((ft, gt)) = fg(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                    next = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew, gn)) = next else {
            return Some(Minimum { x, value: fx, iterations: iter, converged: false });
        };
        let s = nalgebra::DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = nalgebra::DVector::from_iterator(n, gn.iter().zip(&gx).map(|(a, b)| a - b));
        let step = s.amax();
        x = xn;
        fx = fnew;
        gx = gn;
        if step <= xtol {
            return Some(Minimum { x, value: fx, iterations: iter + 1, converged: true });
        }
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = nalgebra::DMatrix::<f64>::identity(n, n);
            let a = &i - rho * &s * y.transpose();
            let b = &i - rho * &y * s.transpose();
            h = a * h * b + rho * &s * s.transpose();
        }
    }
    Some(Minimum { x, value: fx, iterations: max_iter, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_quadratic() {
        let mut f = |x: f64| (x - 1.3).powi(2) + 0.5;
        let ((a, b, c), _) = bracket_minimum(&mut f, -4.0, 0.1, -10.0, 10.0);
        assert!(a <= 1.3 && 1.3 <= c);
        let m = brent(&mut f, a, b, c, 1e-10, 200);
        assert!(m.converged && (m.x[0] - 1.3).abs() < 1e-8);
    }

    #[test]
    fn brent_with_infeasible_region() {
        let mut f = |x: f64| if x.abs() > 2.0 { f64::INFINITY } else { (x + 0.4).powi(2) };
        let ((a, b, c), _) = bracket_minimum(&mut f, 1.5, 0.3, -10.0, 10.0);
        let m = brent(&mut f, a, b, c, 1e-10, 200);
        assert!((m.x[0] + 0.4).abs() < 1e-8);
    }

    #[test]
    fn bracket_at_domain_edge() {
        let mut f = |x: f64| -x;
        let ((_, b, c), _) = bracket_minimum(&mut f, 0.0, 0.5, -1.0, 1.0);
        assert_eq!(c, 1.0);
        assert!(b <= 1.0);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(&mut f, &[-1.2, 1.0], &[0.1, 0.1], 1e-10, 5000);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bfgs_quadratic() {
        let mut fg = |x: &[f64]| {
            Some(((x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 2.0), 6.0 * (x[1] + 1.0)]))
        };
        let m = bfgs(&mut fg, &[0.0, 0.0], 1e-10, 200).unwrap();
        assert!((m.x[0] - 2.0).abs() < 1e-8 && (m.x[1] + 1.0).abs() < 1e-8);
    }
}
