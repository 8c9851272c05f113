//! Small dense complex linear algebra used by every solver.
//!
//! Matrices are tiny (N_t, K ≲ 16), so everything is dense and allocation
//! per call is acceptable.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Ridge added to the diagonal when a plain Cholesky factorization fails.
pub const DEFAULT_RIDGE: f64 = 1e-12;

/// Solves `A X = B` for hermitian positive-definite `A`.
///
/// The factorization is attempted on `A` first. Only if it fails is
/// `ridge * I` added and the factorization retried once.
pub fn herm_solve(a: &CMatrix, b: &CMatrix, ridge: f64) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "herm_solve: A is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "herm_solve: A is {}x{} but B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let factor = match cholesky(a, 0.0) {
        Some(l) => l,
        None => cholesky(a, ridge).ok_or(Error::NotPositiveDefinite)?,
    };
    let x = cholesky_solve(&factor, b);
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(x)
}

/// Lower-triangular `L` with `A + shift I = L L^H`, reading only the lower
/// triangle of `A`. `None` when a pivot is not strictly positive.
fn cholesky(a: &CMatrix, shift: f64) -> Option<CMatrix> {
    let n = a.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re + shift;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..x.ncols() {
        // L y = b
        for i in 0..n {
            let mut s = x[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
        // L^H x = y
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

/// Vector form of [`herm_solve`].
pub fn herm_solve_vec(a: &CMatrix, b: &CVector, ridge: f64) -> Result<CVector> {
    let bm = CMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = herm_solve(a, &bm, ridge)?;
    Ok(x.column(0).into_owned())
}

/// Largest entry-wise deviation `|A - A^H|`.
pub fn hermitian_residual(a: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
