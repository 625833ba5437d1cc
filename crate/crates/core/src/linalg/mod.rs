//! Dense symmetric linear algebra: validated matrix newtypes, the Jacobi
//! eigensolver, spectral matrix functions with their Fréchet derivatives, and
//! Cholesky factorization with its differential.

mod cholesky;
mod eigen;
mod matfun;

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cholesky::{
    chol, chol_diff, chol_diff_factor, chol_inv_diff, cholesky_factor, solve_lower, solve_lower_transpose,
};
pub use eigen::{jacobi_eigen, sym_eig};
pub use matfun::{loewner, mat_fn, mat_fn_diff, mexp, mlog, mpow, MatFn, Spectral};
pub(crate) use matfun::loewner_with;

/// Minimum eigenvalue an [`SpdMatrix`] must exceed.
pub const PD_TOLERANCE: f64 = 1e-10;
/// Relative asymmetry accepted by the symmetric constructors.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Relative eigenvalue gap below which divided differences become derivatives.
pub const EQUAL_EIGEN_GAP: f64 = 1e-8;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::dims("non-empty square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

/// Row-major nested vectors, the on-disk form of every matrix parameter.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::dims("non-empty rectangular rows", format!("{r} rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// A real symmetric matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry to [`SYMMETRY_TOLERANCE`] (relative to the largest
    /// entry), then stores the exactly symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let scale = m.amax();
        let asym = asymmetry(&m);
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    /// Symmetrizes `½(M + Mᵀ)` without checking how far `m` was from symmetric.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        check_square(m)?;
        Ok(SymMatrix(symmetrize(m)))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        SymMatrix(m)
    }

    pub fn from_row_slice(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::dims(n * n, values.len()));
        }
        Self::new(DMatrix::from_row_slice(n, n, values))
    }

    pub fn from_diagonal(values: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    /// Row-major vectorization of all n² entries.
    pub fn vectorize(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::new(from_rows(&rows)?)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(s: SymMatrix) -> Self {
        to_rows(&s.0)
    }
}

/// A symmetric positive definite matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SpdMatrix(SymMatrix);

impl SpdMatrix {
    /// Symmetry check, symmetrization, then a minimum-eigenvalue check
    /// against [`PD_TOLERANCE`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::from_sym(SymMatrix::new(m)?)
    }

    /// Symmetrizes first; used for matrices produced by upstream arithmetic.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        Self::from_sym(SymMatrix::symmetrize(m)?)
    }

    pub fn from_sym(s: SymMatrix) -> Result<Self> {
        let eig = sym_eig(&s)?;
        let min = eig.min_value();
        if !(min > PD_TOLERANCE) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(SpdMatrix(s))
    }

    pub fn from_row_slice(n: usize, values: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_row_slice(n, values)?)
    }

    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        Self::from_sym(SymMatrix::from_diagonal(values))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        SpdMatrix(SymMatrix::new_unchecked(m))
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(SymMatrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0 .0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0 .0
    }
}

impl Deref for SpdMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0 .0
    }
}

impl AsRef<SymMatrix> for SpdMatrix {
    fn as_ref(&self) -> &SymMatrix {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for SpdMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SpdMatrix::new(from_rows(&rows)?)
    }
}

impl From<SpdMatrix> for Vec<Vec<f64>> {
    fn from(s: SpdMatrix) -> Self {
        to_rows(s.as_matrix())
    }
}

/// A lower triangular matrix; entries above the diagonal are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriMatrix(DMatrix<f64>);

impl LowerTriMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = check_square(&m)?;
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != 0.0 {
                    return Err(Error::Domain(format!(
                        "entry ({i}, {j}) above the diagonal is {} (must be 0)",
                        m[(i, j)]
                    )));
                }
            }
        }
        Ok(LowerTriMatrix(m))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        LowerTriMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for LowerTriMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Orthogonal eigenvectors (columns) and eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    /// `U · diag(g(σ)) · Uᵀ`.
    pub fn map_values(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let u = &self.vectors;
        let mut scaled = u.clone();
        for (j, &s) in self.values.iter().enumerate() {
            let gj = g(s);
            scaled.column_mut(j).scale_mut(gj);
        }
        symmetrize(&(scaled * u.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_values(|s| s)
    }

    /// `U · (Λ ∘ (Uᵀ V U)) · Uᵀ` for a symmetric weight matrix `Λ`.
    pub fn hadamard_in_basis(&self, lambda: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let u = &self.vectors;
        let inner = u.transpose() * v * u;
        let weighted = inner.component_mul(lambda);
        symmetrize(&(u * weighted * u.transpose()))
    }
}

/// `⌊M⌋`: the strictly lower part.
pub fn strict_lower(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, m.ncols(), |i, j| if i > j { m[(i, j)] } else { 0.0 })
}

/// The strictly upper part.
pub fn strict_upper(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, m.ncols(), |i, j| if i < j { m[(i, j)] } else { 0.0 })
}

/// `𝔻(M)`: the diagonal part.
pub fn diag_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, m.ncols(), |i, j| if i == j { m[(i, j)] } else { 0.0 })
}

/// `Dlog(L)`: diagonal matrix of the logarithms of the diagonal of `L`.
pub fn dlog(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let d = l[(i, i)];
        if !(d > 0.0) {
            return Err(Error::Domain(format!("Dlog needs a positive diagonal; entry {i} is {d}")));
        }
        out[(i, i)] = d.ln();
    }
    Ok(out)
}
