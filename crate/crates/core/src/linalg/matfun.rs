use nalgebra::{DMatrix, DVector};

use super::{sym_eig, EigenPair, SpdMatrix, SymMatrix, EQUAL_EIGEN_GAP, PD_TOLERANCE};
use crate::error::{Error, Result};

/// Scalar function lifted to symmetric matrices through the spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatFn {
    Log,
    Exp,
    Pow(f64),
}

impl MatFn {
    pub fn value(self, x: f64) -> f64 {
        match self {
            MatFn::Log => x.ln(),
            MatFn::Exp => x.exp(),
            MatFn::Pow(t) => x.powf(t),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            MatFn::Log => 1.0 / x,
            MatFn::Exp => x.exp(),
            MatFn::Pow(t) => t * x.powf(t - 1.0),
        }
    }

    /// `(f(a) − f(b)) / (a − b)` for `a ≠ b`, written to avoid cancellation.
    pub fn divided_difference(self, a: f64, b: f64) -> f64 {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let gap = hi - lo;
        match self {
            MatFn::Log => ((hi - lo) / lo).ln_1p() / gap,
            MatFn::Exp => lo.exp() * gap.exp_m1() / gap,
            MatFn::Pow(t) => {
                let d = ((hi - lo) / lo).ln_1p();
                lo.powf(t - 1.0) * (t * d).exp_m1() / d.exp_m1()
            }
        }
    }

    fn check_domain(self, eig: &EigenPair) -> Result<()> {
        let min = eig.min_value();
        let ok = match self {
            MatFn::Exp => true,
            MatFn::Log => min > PD_TOLERANCE,
            MatFn::Pow(t) if t < 1.0 => min > PD_TOLERANCE,
            MatFn::Pow(_) => min > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite { min_eigenvalue: min })
        }
    }
}

/// Loewner matrix of first divided differences of `f` on `values`, with the
/// derivative substituted when two eigenvalues are within
/// `EQUAL_EIGEN_GAP · max|σ|` of each other.
pub fn loewner(values: &DVector<f64>, f: MatFn) -> DMatrix<f64> {
    loewner_with(values, |a| f.derivative(a), |a, b| f.divided_difference(a, b))
}

pub(crate) fn loewner_with(
    values: &DVector<f64>,
    derivative: impl Fn(f64) -> f64,
    divided: impl Fn(f64, f64) -> f64,
) -> DMatrix<f64> {
    let n = values.len();
    let scale = values.amax();
    let gap = EQUAL_EIGEN_GAP * scale;
    let mut lambda = DMatrix::zeros(n, n);
    for i in 0..n {
        lambda[(i, i)] = derivative(values[i]);
        for j in 0..i {
            let (a, b) = (values[i], values[j]);
            let entry = if (a - b).abs() <= gap {
                0.5 * (derivative(a) + derivative(b))
            } else {
                divided(a, b)
            };
            lambda[(i, j)] = entry;
            lambda[(j, i)] = entry;
        }
    }
    lambda
}

/// A cached eigendecomposition from which matrix functions and their
/// Fréchet derivatives are evaluated.
#[derive(Clone, Debug)]
pub struct Spectral {
    eig: EigenPair,
}

impl Spectral {
    pub fn new(s: &SymMatrix) -> Result<Self> {
        Ok(Spectral { eig: sym_eig(s)? })
    }

    pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Ok(Spectral {
            eig: super::jacobi_eigen(m)?,
        })
    }

    pub fn from_eigen(eig: EigenPair) -> Self {
        Spectral { eig }
    }

    pub fn eigen(&self) -> &EigenPair {
        &self.eig
    }

    pub fn apply(&self, f: MatFn) -> Result<DMatrix<f64>> {
        f.check_domain(&self.eig)?;
        Ok(self.eig.map_values(|x| f.value(x)))
    }

    /// Spectral factor of `f(S)`: same eigenvectors, eigenvalues mapped by `f`.
    /// Only valid for monotone increasing `f` (keeps the descending order).
    pub fn mapped(&self, f: MatFn) -> Result<Spectral> {
        f.check_domain(&self.eig)?;
        let values = self.eig.values.map(|x| f.value(x));
        let mut eig = EigenPair {
            vectors: self.eig.vectors.clone(),
            values,
        };
        if matches!(f, MatFn::Pow(t) if t < 0.0) {
            reverse_order(&mut eig);
        }
        Ok(Spectral { eig })
    }

    pub fn loewner(&self, f: MatFn) -> Result<DMatrix<f64>> {
        f.check_domain(&self.eig)?;
        Ok(loewner(&self.eig.values, f))
    }

    /// Daleckii–Krein derivative `f_{*,S}(V)`, or its inverse when `inverse`.
    pub fn diff(&self, f: MatFn, v: &DMatrix<f64>, inverse: bool) -> Result<DMatrix<f64>> {
        let mut lambda = self.loewner(f)?;
        if inverse {
            invert_entries(&mut lambda)?;
        }
        Ok(self.eig.hadamard_in_basis(&lambda, v))
    }
}

fn reverse_order(eig: &mut EigenPair) {
    let n = eig.values.len();
    let values = DVector::from_fn(n, |i, _| eig.values[n - 1 - i]);
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.vectors[(r, n - 1 - c)]);
    eig.values = values;
    eig.vectors = vectors;
}

pub(crate) fn invert_entries(lambda: &mut DMatrix<f64>) -> Result<()> {
    let n = lambda.nrows();
    for i in 0..n {
        for j in 0..n {
            let x = lambda[(i, j)];
            if x == 0.0 || !x.is_finite() {
                return Err(Error::SingularDifferential { row: i, col: j });
            }
            lambda[(i, j)] = 1.0 / x;
        }
    }
    Ok(())
}

/// `U · diag(f(σ)) · Uᵀ`.
pub fn mat_fn(s: &SymMatrix, f: MatFn) -> Result<SymMatrix> {
    Ok(SymMatrix::new_unchecked(Spectral::new(s)?.apply(f)?))
}

pub fn mlog(s: &SpdMatrix) -> Result<SymMatrix> {
    mat_fn(s.as_sym(), MatFn::Log)
}

pub fn mexp(v: &SymMatrix) -> Result<SpdMatrix> {
    Ok(SpdMatrix::new_unchecked(Spectral::new(v)?.apply(MatFn::Exp)?))
}

pub fn mpow(s: &SpdMatrix, theta: f64) -> Result<SpdMatrix> {
    Ok(SpdMatrix::new_unchecked(Spectral::new(s.as_sym())?.apply(MatFn::Pow(theta))?))
}

/// Fréchet derivative of the matrix function `f` at `base` applied to `v`
/// (or the inverse of that linear map when `inverse` is set).
pub fn mat_fn_diff(base: &SymMatrix, f: MatFn, v: &SymMatrix, inverse: bool) -> Result<SymMatrix> {
    if base.dim() != v.dim() {
        return Err(Error::dims(base.dim(), v.dim()));
    }
    let spectral = Spectral::new(base)?;
    Ok(SymMatrix::new_unchecked(spectral.diff(f, v.as_matrix(), inverse)?))
}
