use nalgebra::{DMatrix, DVector};

use crate::error::{GmlmError, Result};

/// Largest admissible condition number of an equilibrated normal matrix.
pub(crate) const MAX_CONDITION: f64 = 1e12;

/// Eigenvalues below this (relative to the largest) are treated as zero in
/// pseudoinverses.
const RELATIVE_RANK_TOL: f64 = 1e-12;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix, plus its rank.
/// Negative eigenvalues (numerical noise) are clamped to zero first.
pub(crate) fn psd_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    let sym = symmetrize(m);
    if sym.iter().all(|v| *v == 0.0) {
        return (DMatrix::zeros(n, n), 0);
    }
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if top <= 0.0 {
        return (DMatrix::zeros(n, n), 0);
    }
    let tol = top * RELATIVE_RANK_TOL;
    let mut rank = 0;
    let inv_vals = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&l| {
            if l > tol {
                rank += 1;
                1.0 / l
            } else {
                0.0
            }
        }),
    );
    let q = &eig.eigenvectors;
    let pinv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    (symmetrize(&pinv), rank)
}

/// Clamps eigenvalues of a symmetric matrix below zero to zero.
pub(crate) fn clamp_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if sym.iter().all(|v| *v == 0.0) {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let vals = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose()))
}

/// Inverts a symmetric positive definite normal matrix after scaling it to
/// unit diagonal. Fails when the scaled condition number exceeds
/// [`MAX_CONDITION`].
pub(crate) fn guarded_spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(GmlmError::DegenerateDesign(format!(
            "{what} has a non-positive diagonal"
        )));
    }
    let scale = DVector::from_iterator(n, diag.iter().map(|d| 1.0 / d.sqrt()));
    let mut scaled = symmetrize(a);
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] *= scale[i] * scale[j];
        }
    }
    let eig = scaled.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(GmlmError::DegenerateDesign(format!(
            "{what} is singular or ill-conditioned (condition {:.3e})",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    let inv = scaled
        .cholesky()
        .ok_or_else(|| GmlmError::DegenerateDesign(format!("{what} is not positive definite")))?
        .inverse();
    let mut out = inv;
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] *= scale[i] * scale[j];
        }
    }
    Ok(symmetrize(&out))
}

/// Sample covariance (divisor B - 1) of the rows of `draws`.
pub(crate) fn sample_covariance(draws: &[DVector<f64>]) -> DMatrix<f64> {
    let b = draws.len();
    let dim = draws.first().map_or(0, |d| d.len());
    if b < 2 {
        return DMatrix::zeros(dim, dim);
    }
    let mut mean = DVector::zeros(dim);
    for d in draws {
        mean += d;
    }
    mean /= b as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for d in draws {
        let c = d - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    symmetrize(&(cov / (b - 1) as f64))
}
