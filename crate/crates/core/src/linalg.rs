//! Small dense helpers shared by the metric code.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal shift used when a matrix that should be positive definite fails
/// its Cholesky factorisation.
pub(crate) const PD_REGULARIZATION: f64 = 1e-10;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive definite matrix, retrying once with an
/// `εI` shift when the plain Cholesky factorisation fails.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(symmetrize(&ch.inverse()));
    }
    let n = sym.nrows();
    let shifted = sym + DMatrix::identity(n, n) * PD_REGULARIZATION;
    shifted
        .cholesky()
        .map(|ch| symmetrize(&ch.inverse()))
        .ok_or_else(|| Error::numerical("matrix is not positive definite after regularisation"))
}

/// `log det` of a symmetric positive definite matrix via Cholesky, with the
/// same `εI` retry as [`spd_inverse`].
pub(crate) fn spd_log_det(m: &DMatrix<f64>) -> Result<f64> {
    let sym = symmetrize(m);
    let n = sym.nrows();
    let ch = sym
        .clone()
        .cholesky()
        .or_else(|| (sym + DMatrix::identity(n, n) * PD_REGULARIZATION).cholesky())
        .ok_or_else(|| Error::numerical("matrix is not positive definite after regularisation"))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Returns `L` (p×p) with `L Lᵀ = M` for a symmetric PSD matrix, clamping
/// tiny negative eigenvalues to zero.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut factor = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    factor
}

/// Compact column factor `F` (p×r, r ≤ p) with `F Fᵀ = Dᵀ D` for a stacked
/// row-difference matrix `D` (rows × p). When `D` has no more rows than
/// columns it is returned transposed as-is.
pub(crate) fn compact_factor(diff: &DMatrix<f64>) -> DMatrix<f64> {
    if diff.nrows() <= diff.ncols() {
        return diff.transpose();
    }
    let r = diff.clone().qr().r();
    r.transpose()
}
