//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here wraps nalgebra. The two pieces with actual policy content
//! are the truncated pseudoinverse (the estimator's singularity handling) and
//! the symmetric-PD square-root pair used by the operator-norm computation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest singular value, i.e. the spectral norm. Zero-sized matrices have
/// norm 0 by convention.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // Values-only SVD; nalgebra's Golub-Kahan is fine at the sizes we use.
    m.clone().singular_values().max()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix follow the same order).
pub fn symmetric_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let se = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &se.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Outcome of a truncated pseudoinverse of a symmetric PSD matrix.
pub struct PsdPinv {
    pub pinv: DMatrix<f64>,
    /// Number of eigenvalues kept.
    pub rank: usize,
    /// Number of eigenvalues truncated to zero.
    pub truncated: usize,
    /// Largest eigenvalue (0 for the zero matrix).
    pub lambda_max: f64,
}

/// Moore-Penrose pseudoinverse of a symmetric positive-semidefinite matrix,
/// truncating every eigenvalue `<= rcond * lambda_max`.
///
/// Empirical Gram matrices are averages of rank-one outer products, so they
/// are symmetric PSD up to roundoff; the symmetric eigensolver is both more
/// stable and cheaper than a general SVD here. Slightly negative roundoff
/// eigenvalues fall below any sensible threshold and are truncated.
pub fn psd_pinv(m: &DMatrix<f64>, rcond: f64) -> PsdPinv {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "psd_pinv expects a square matrix");
    // Symmetrize defensively; callers pass matrices symmetric to roundoff.
    let sym = (m + m.transpose()) * 0.5;
    let se = sym.symmetric_eigen();
    let lambda_max = se.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = rcond * lambda_max;
    let mut rank = 0usize;
    let inv_vals: Vec<f64> = se
        .eigenvalues
        .iter()
        .map(|&l| {
            if l > tol && l > 0.0 {
                rank += 1;
                1.0 / l
            } else {
                0.0
            }
        })
        .collect();
    // pinv = V diag(inv_vals) V^T, assembled without forming diag explicitly.
    let mut scaled = se.eigenvectors.clone();
    for (j, &iv) in inv_vals.iter().enumerate() {
        let mut col = scaled.column_mut(j);
        col *= iv;
    }
    let pinv = scaled * se.eigenvectors.transpose();
    PsdPinv {
        pinv,
        rank,
        truncated: n - rank,
        lambda_max,
    }
}

/// `(G^{1/2}, G^{-1/2})` for a symmetric positive-definite matrix.
///
/// Fails if the smallest eigenvalue is not strictly positive relative to the
/// largest (tolerance `1e-14 * lambda_max`): the operator-norm formulas this
/// feeds are meaningless for a degenerate Gram matrix.
pub fn spd_sqrt_pair(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (vals, vecs) = symmetric_eigen_sorted(&((g + g.transpose()) * 0.5));
    let lmax = vals[0];
    let lmin = vals[vals.len() - 1];
    if !(lmax > 0.0) || lmin <= 1e-14 * lmax {
        return Err(Error::Numerical(format!(
            "matrix is not positive definite: eigenvalue range [{lmin:.3e}, {lmax:.3e}]"
        )));
    }
    let n = g.nrows();
    let mut half = vecs.clone();
    let mut inv_half = vecs.clone();
    for j in 0..n {
        let s = vals[j].sqrt();
        half.column_mut(j).scale_mut(s);
        inv_half.column_mut(j).scale_mut(1.0 / s);
    }
    Ok((&half * vecs.transpose(), &inv_half * vecs.transpose()))
}

/// Spectral condition number of a symmetric positive-definite matrix.
pub fn spd_condition(g: &DMatrix<f64>) -> Result<f64> {
    let (vals, _) = symmetric_eigen_sorted(&((g + g.transpose()) * 0.5));
    let lmax = vals[0];
    let lmin = vals[vals.len() - 1];
    if !(lmin > 0.0) {
        return Err(Error::Numerical(format!(
            "condition number undefined: smallest eigenvalue {lmin:.3e}"
        )));
    }
    Ok(lmax / lmin)
}
