//! Small dense linear-algebra helpers shared by the solver and theory code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Copies the `rows × cols` sub-block of `m`.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Copies the listed columns of `m`.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Indices in `0..p` that are not in the sorted set `support`.
pub fn complement(support: &[usize], p: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(p.saturating_sub(support.len()));
    let mut it = support.iter().peekable();
    for i in 0..p {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{what} contains non-finite entries")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (f64::NAN, f64::NAN);
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigen_extremes(m).0
}

/// `max_i Σ_j |m_ij|`, the operator norm induced by l∞.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Quadratic form `vᵀ A⁻¹ v` through a Cholesky solve.
pub fn inverse_quadratic_form(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    let x = chol.solve(v);
    v.dot(&x)
}
