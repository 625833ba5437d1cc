//! Seeded generators for random symmetric, SPD, and orthogonal matrices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{symmetrize, SpdMatrix, SymMatrix};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Symmetric matrix with i.i.d. N(0, scale²) entries on and below the diagonal.
pub fn random_sym<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> SymMatrix {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let x = scale * rng.sample::<f64, _>(StandardNormal);
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    SymMatrix::new_unchecked(m)
}

/// Haar-distributed orthogonal matrix: Q factor of a Gaussian matrix with
/// the signs of R's diagonal folded into Q.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// SPD matrix with a Haar eigenbasis and log-uniform spectrum whose
/// condition number is at most `cond` (the extremes are hit when n ≥ 2).
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, cond: f64) -> SpdMatrix {
    let q = random_orthogonal(rng, n);
    let half = 0.5 * cond.max(1.0).ln();
    let values: Vec<f64> = (0..n)
        .map(|i| match i {
            0 if n > 1 => half.exp(),
            1 => (-half).exp(),
            _ => rng.random_range(-half..=half).exp(),
        })
        .collect();
    let d = DMatrix::from_diagonal(&DVector::from_vec(values));
    SpdMatrix::new_unchecked(symmetrize(&(&q * d * q.transpose())))
}

/// SPD matrix `mexp(X)` with `X` Gaussian symmetric of entry scale `scale`;
/// a milder distribution than [`random_spd`] for geometry checks.
pub fn random_spd_exp<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> SpdMatrix {
    let x = random_sym(rng, n, scale);
    crate::linalg::mexp(&x).expect("Jacobi converges on finite symmetric input")
}
