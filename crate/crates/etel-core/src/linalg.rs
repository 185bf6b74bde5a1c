//! Small dense linear-algebra helpers with explicit singularity checks.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue / singular value floor below which a matrix is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-13;

/// Inverse of a symmetric positive definite matrix, or `None` when the smallest
/// eigenvalue is below `SINGULAR_RTOL` times the largest.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= SINGULAR_RTOL * max {
        return None;
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Some(symmetrize(&inv))
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    spd_inverse(a).map(|inv| inv * b)
}

/// Inverse of a general square matrix, or `None` when its condition number exceeds `1 / SINGULAR_RTOL`.
pub fn general_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let svd = a.clone().svd(false, false);
    let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= SINGULAR_RTOL * max {
        return None;
    }
    a.clone().try_inverse()
}

/// `(a + a') / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a).symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}
