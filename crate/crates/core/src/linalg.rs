//! Symmetric positive-definite factorization helpers.
//!
//! All information matrices in this crate are symmetric PSD by construction,
//! so inversion goes through a Cholesky factorization with an explicit pivot
//! threshold rather than a general LU.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold: a factorization pivot below
/// `PIVOT_REL_TOL * max_diag` marks the matrix as singular.
pub const PIVOT_REL_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric PD matrix.
///
/// Returns `SingularInformation` when a pivot falls below the relative
/// threshold, i.e. the matrix is rank-deficient for practical purposes.
pub fn spd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    let max_diag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let tol = PIVOT_REL_TOL * max_diag.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return Err(Error::SingularInformation);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `M x = b` for symmetric PD `M` via forward/back substitution.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let l = spd_factor(m)?;
    let n = m.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[(i, k)] * v;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = y[k];
            y[i] -= l[(k, i)] * v;
        }
        y[i] /= l[(i, i)];
    }
    Ok(y)
}

/// Inverse of a symmetric PD matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut inv = DMatrix::zeros(n, n);
    // column-by-column solve keeps the pivot check in one place
    let l = spd_factor(m)?;
    for j in 0..n {
        let mut y = DVector::zeros(n);
        y[j] = 1.0;
        for i in 0..n {
            for k in 0..i {
                let v = y[k];
                y[i] -= l[(i, k)] * v;
            }
            y[i] /= l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let v = y[k];
                y[i] -= l[(k, i)] * v;
            }
            y[i] /= l[(i, i)];
        }
        inv.set_column(j, &y);
    }
    // symmetrize against rounding
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Ok(inv)
}
