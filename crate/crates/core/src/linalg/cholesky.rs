use nalgebra::DMatrix;

use super::{diag_part, strict_lower, LowerTriMatrix, SpdMatrix, SymMatrix};
use crate::error::{Error, Result};

/// Lower Cholesky factor `L` with `L Lᵀ = S` and positive diagonal.
pub fn chol(s: &SpdMatrix) -> Result<LowerTriMatrix> {
    Ok(LowerTriMatrix::new_unchecked(cholesky_factor(s.as_matrix())?))
}

/// Cholesky–Banachiewicz on the lower triangle of `m`.
pub fn cholesky_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::dims("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::NotPositiveDefinite { min_eigenvalue: sum });
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves `L X = B` by forward substitution.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut sum = x[(i, c)];
            for k in 0..i {
                sum -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = sum / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ X = B` by back substitution.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut sum = x[(i, c)];
            for k in (i + 1)..n {
                sum -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = sum / l[(i, i)];
        }
    }
    x
}

/// `chol_{*,S}(V) = L (⌊A⌋ + ½𝔻(A))` with `A = L⁻¹ V L⁻ᵀ`.
pub fn chol_diff(s: &SpdMatrix, v: &SymMatrix) -> Result<LowerTriMatrix> {
    if s.dim() != v.dim() {
        return Err(Error::dims(s.dim(), v.dim()));
    }
    let l = cholesky_factor(s.as_matrix())?;
    Ok(LowerTriMatrix::new_unchecked(chol_diff_factor(&l, v.as_matrix())))
}

/// Cholesky differential given the factor `L` of the base point.
pub fn chol_diff_factor(l: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let y = solve_lower(l, v);
    let a = solve_lower(l, &y.transpose()).transpose();
    let inner = strict_lower(&a) + diag_part(&a) * 0.5;
    l * inner
}

/// Differential of `L ↦ L Lᵀ` at `L`: `X Lᵀ + L Xᵀ`.
pub fn chol_inv_diff(l: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let xl = x * l.transpose();
    &xl + xl.transpose()
}
