//! Oracles shared by the integration tests. Matrix functions here go through
//! nalgebra's eigensolver so that they do not share code with the crate.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use spdmlr::classifier::Hyperplane;
use spdmlr::geometry::{geodesic_dist, metric_at, parallel_transport, rie_exp};
use spdmlr::linalg::{SpdMatrix, SymMatrix};

pub fn spectral(s: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

pub fn ref_log(s: &DMatrix<f64>) -> DMatrix<f64> {
    spectral(s, f64::ln)
}

pub fn ref_pow(s: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    spectral(s, |x| x.powf(p))
}

/// Fréchet derivative of the principal logarithm at `s` in direction `g`,
/// from first divided differences in the eigenbasis.
pub fn ref_log_diff(s: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let u = &eig.eigenvectors;
    let l = &eig.eigenvalues;
    let n = l.len();
    let mut inner = u.transpose() * g * u;
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (l[i], l[j]);
            let dd = if ((a - b) / a).abs() < 1e-9 { 2.0 / (a + b) } else { (a.ln() - b.ln()) / (a - b) };
            inner[(i, j)] *= dd;
        }
    }
    u * inner * u.transpose()
}

/// Minimizes `f` over ℝ² with Nelder–Mead from `start` with initial edge
/// `size`.
pub fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], size: f64, iterations: usize) -> ([f64; 2], f64) {
    let mut simplex = [start, [start[0] + size, start[1]], [start[0], start[1] + size]];
    let mut values = simplex.map(&f);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..iterations {
        let mut order = [0, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);
        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(simplex[2], centroid, 2.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = lerp(simplex[2], centroid, 3.0);
            let fe = f(expanded);
            (simplex[2], values[2]) = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < values[1] {
            (simplex[2], values[2]) = (reflected, fr);
        } else {
            let contracted = lerp(simplex[2], centroid, 0.5);
            let fc = f(contracted);
            if fc < values[2] {
                (simplex[2], values[2]) = (contracted, fc);
            } else {
                for k in 1..3 {
                    simplex[k] = lerp(simplex[0], simplex[k], 0.5);
                    values[k] = f(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    (simplex[best], values[best])
}

pub struct MarginOracle {
    /// Smallest distance found by search.
    pub minimum: f64,
    /// Every distance evaluated at a feasible point.
    pub sampled_min: f64,
}

/// Brute-force distance from `s` to the 2×2 hyperplane `h`. Feasible points
/// are `Exp_P(u B₁ + v B₂)` with `B₁, B₂` a `g_P`-orthonormal basis of the
/// complement of the transported normal.
pub fn margin_oracle(s: &SpdMatrix, h: &Hyperplane, samples: usize, rng: &mut impl rand::Rng) -> MarginOracle {
    let metric = h.metric();
    let p = h.shift();
    let a = parallel_transport(metric, &SpdMatrix::identity(2), p, h.normal()).unwrap();
    let inner = |x: &SymMatrix, y: &SymMatrix| metric_at(metric, p, x, y).unwrap();
    let mut basis: Vec<SymMatrix> = Vec::new();
    let raw = [
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
    ];
    let mut frame = vec![a.scale(1.0 / inner(&a, &a).sqrt())];
    for e in raw {
        let mut v = SymMatrix::new(e).unwrap();
        for b in &frame {
            v = v.sub(&b.scale(inner(&v, b)));
        }
        let norm = inner(&v, &v).sqrt();
        if norm > 1e-6 && frame.len() < 3 {
            frame.push(v.scale(1.0 / norm));
        }
    }
    basis.extend(frame.into_iter().skip(1));
    assert_eq!(basis.len(), 2);

    let dist = |uv: [f64; 2]| {
        let w = basis[0].scale(uv[0]).add(&basis[1].scale(uv[1]));
        // far chart points can overflow on the way back to the cone
        rie_exp(metric, p, &w)
            .and_then(|q| geodesic_dist(metric, s, &q))
            .unwrap_or(f64::INFINITY)
    };
    let radius = 2.0 * geodesic_dist(metric, s, p).unwrap() + 1.0;
    let mut best = ([0.0, 0.0], dist([0.0, 0.0]));
    let mut sampled_min = best.1;
    for _ in 0..samples {
        let uv = [rng.random_range(-radius..radius), rng.random_range(-radius..radius)];
        let d = dist(uv);
        sampled_min = sampled_min.min(d);
        if d < best.1 {
            best = (uv, d);
        }
    }
    let step = 2.0 * radius / (samples as f64).sqrt();
    let (_, refined) = nelder_mead(dist, best.0, step, 400);
    MarginOracle {
        minimum: refined.min(best.1),
        sampled_min,
    }
}
