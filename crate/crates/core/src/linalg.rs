//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Largest absolute entry; `0` for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.transpose())) <= tol * (1.0 + max_abs(m))
}

/// Symmetric eigenvalues in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Checks symmetry and that the smallest eigenvalue exceeds `tol` times the largest.
pub fn check_spd(m: &DMatrix<f64>, name: &str, tol: f64) -> Result<()> {
    if !is_symmetric(m, 1e-10) {
        return Err(Error::Parameter(format!("{name} is not symmetric")));
    }
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev.first().copied().unwrap_or(0.0), ev.last().copied().unwrap_or(0.0));
    if !(lo > tol * hi.abs().max(f64::MIN_POSITIVE)) || !lo.is_finite() {
        return Err(Error::Parameter(format!(
            "{name} is not positive definite (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    Ok(())
}

/// Unique symmetric positive semi-definite square root.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let s = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    symmetrize(&s)
}

/// Inverse of a symmetric positive-definite matrix; `0×0` maps to `0×0`.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let chol = nalgebra::Cholesky::new(symmetrize(m))?;
    Some(symmetrize(&chol.inverse()))
}

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with relative tolerance on the largest singular value.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Horizontal concatenation `[a b]`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Sample covariance (divisor `n - 1`) of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let k = x.ncols();
    if n < 2 {
        return DMatrix::zeros(k, k);
    }
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    symmetrize(&((c.transpose() * &c) / (n as f64 - 1.0)))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parameter(format!("expected {ncols} columns in every row")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
