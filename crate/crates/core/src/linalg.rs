//! Small dense complex helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result, C64};

/// Pivot ratio below which a square system is treated as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

/// `‖a - b‖₂ / ‖b‖₂` (absolute error when `b` is zero).
pub fn relative_error(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let base = norm_sq(b);
    if base == 0.0 {
        diff.sqrt()
    } else {
        (diff / base).sqrt()
    }
}

pub fn mat_vec(m: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

/// Solves the square system `m x = b` with full pivoting.
pub fn solve_square(m: &DMatrix<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let lu = m.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let max = diag.iter().map(|d| d.norm()).fold(0.0, f64::max);
    let min = diag.iter().map(|d| d.norm()).fold(f64::INFINITY, f64::min);
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < SINGULAR_PIVOT_RATIO {
        return Err(Error::Singular(ratio));
    }
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or(Error::Singular(ratio))
}

/// Solves `m x = b` for Hermitian positive-definite `m` by Cholesky.
pub fn solve_hpd(m: DMatrix<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let chol = nalgebra::linalg::Cholesky::new(m).ok_or(Error::Singular(0.0))?;
    Ok(chol
        .solve(&DVector::from_column_slice(b))
        .as_slice()
        .to_vec())
}
