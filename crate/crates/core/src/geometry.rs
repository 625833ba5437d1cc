//! Pullback Euclidean metrics on SPD matrices.
//!
//! Every metric is realized by a diffeomorphism `φ` into a flat matrix space
//! (symmetric matrices for LEM, lower triangular matrices for LCM). The
//! `(α, β)` isometry and the `1/θ` scaling are folded into `φ`, so distances,
//! exponentials, logarithms and parallel transport all reduce to the plain
//! Frobenius geometry of the chart.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    chol_diff_factor, chol_inv_diff, cholesky_factor, diag_part, dlog, solve_lower_transpose,
    strict_lower, symmetrize, MatFn, Spectral, SpdMatrix, SymMatrix,
};

/// Slack added to `−1/n` in the β candidate set so that `α + nβ > 0`.
pub const BETA_EPSILON: f64 = 1e-4;
/// Deformation factors searched for θ-LCM.
pub const THETA_CANDIDATES: [f64; 3] = [0.5, 1.0, 1.5];

/// Which pullback metric: `(α, β)`-LEM or `θ`-LCM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricSpec {
    Lem { alpha: f64, beta: f64 },
    Lcm { theta: f64 },
}

impl MetricSpec {
    pub const STANDARD_LEM: MetricSpec = MetricSpec::Lem { alpha: 1.0, beta: 0.0 };
    pub const STANDARD_LCM: MetricSpec = MetricSpec::Lcm { theta: 1.0 };

    pub fn lem(alpha: f64, beta: f64) -> Self {
        MetricSpec::Lem { alpha, beta }
    }

    pub fn lcm(theta: f64) -> Self {
        MetricSpec::Lcm { theta }
    }

    /// Admissibility at dimension `n`: `min(α, α + nβ) > 0` or `θ ≠ 0`.
    pub fn check(&self, n: usize) -> Result<()> {
        match *self {
            MetricSpec::Lem { alpha, beta } => {
                let bound = alpha.min(alpha + n as f64 * beta);
                if !(bound > 0.0) || !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::Config(format!(
                        "(α, β) = ({alpha}, {beta}) violates min(α, α + nβ) > 0 at n = {n}"
                    )));
                }
            }
            MetricSpec::Lcm { theta } => {
                if theta == 0.0 || !theta.is_finite() {
                    return Err(Error::Config(format!("θ-LCM needs a finite nonzero θ, got {theta}")));
                }
            }
        }
        Ok(())
    }

    /// The β grid `{1, 1/n, 1/n², 0, −1/n + ε, −1/n²}`.
    pub fn beta_candidates(n: usize) -> [f64; 6] {
        let n = n as f64;
        [1.0, 1.0 / n, 1.0 / (n * n), 0.0, -1.0 / n + BETA_EPSILON, -1.0 / (n * n)]
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Lem { alpha, beta } => write!(f, "({alpha},{beta})-LEM"),
            MetricSpec::Lcm { theta } => write!(f, "({theta})-LCM"),
        }
    }
}

/// The image `φ(S)` of an SPD matrix in the flat chart space.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    metric: MetricSpec,
    matrix: DMatrix<f64>,
}

impl ChartPoint {
    /// Validates that `matrix` lies in the codomain of `φ` for `metric`.
    pub fn new(metric: MetricSpec, matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::dims("non-empty square matrix", format!("{}x{}", n, matrix.ncols())));
        }
        metric.check(n)?;
        match metric {
            MetricSpec::Lem { .. } => {
                SymMatrix::new(matrix.clone())?;
            }
            MetricSpec::Lcm { .. } => {
                crate::linalg::LowerTriMatrix::new(matrix.clone())?;
            }
        }
        Ok(ChartPoint { metric, matrix })
    }

    pub fn metric(&self) -> MetricSpec {
        self.metric
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// A tangent vector together with its base point.
#[derive(Clone, Debug)]
pub struct TangentVector {
    pub base: SpdMatrix,
    pub value: SymMatrix,
}

impl TangentVector {
    pub fn new(base: SpdMatrix, value: SymMatrix) -> Result<Self> {
        if base.dim() != value.dim() {
            return Err(Error::dims(base.dim(), value.dim()));
        }
        Ok(TangentVector { base, value })
    }

    pub fn norm(&self, metric: MetricSpec) -> Result<f64> {
        Ok(metric_at(metric, &self.base, &self.value, &self.value)?.sqrt())
    }
}

/// Linear isometry `f_{α,β}` from `⟨·,·⟩^{(α,β)}` to the Frobenius product:
/// `√α·(V − (trV/n)I) + √(α+nβ)·(trV/n)I`.
pub fn oim_isometry(alpha: f64, beta: f64, v: &DMatrix<f64>) -> DMatrix<f64> {
    if beta == 0.0 {
        return v * alpha.sqrt();
    }
    let n = v.nrows();
    let mean = v.trace() / n as f64;
    let mut out = v * alpha.sqrt();
    let shift = ((alpha + n as f64 * beta).sqrt() - alpha.sqrt()) * mean;
    for i in 0..n {
        out[(i, i)] += shift;
    }
    out
}

pub fn oim_isometry_inv(alpha: f64, beta: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    if beta == 0.0 {
        return x / alpha.sqrt();
    }
    let n = x.nrows();
    let mean = x.trace() / n as f64;
    let mut out = x / alpha.sqrt();
    let shift = (1.0 / (alpha + n as f64 * beta).sqrt() - 1.0 / alpha.sqrt()) * mean;
    for i in 0..n {
        out[(i, i)] += shift;
    }
    out
}

/// `α⟨V,W⟩ + β·tr(V)·tr(W)`.
pub fn oim_inner(alpha: f64, beta: f64, v: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    alpha * v.dot(w) + beta * v.trace() * w.trace()
}

/// `⌊A⌋ + ½𝔻(A)`.
pub(crate) fn lower_half_diag(a: &DMatrix<f64>) -> DMatrix<f64> {
    strict_lower(a) + diag_part(a) * 0.5
}

#[derive(Clone, Debug)]
enum FrameKind {
    /// Spectral factor of `S`.
    Lem { spectral: Spectral },
    /// `power`: spectral factor of `S` when `θ ≠ 1`; `factor`: `chol(S^θ)`.
    Lcm { power: Option<Spectral>, factor: DMatrix<f64> },
}

/// `φ` linearized at one point: the chart image together with the cached
/// factorizations that evaluate `φ_{*,S}`, `(φ⁻¹)_{*,φ(S)}` and their adjoints.
#[derive(Clone, Debug)]
pub struct Frame {
    metric: MetricSpec,
    chart: DMatrix<f64>,
    kind: FrameKind,
}

impl Frame {
    /// Linearize `φ` at the SPD matrix `s`.
    pub fn at(metric: MetricSpec, s: &SpdMatrix) -> Result<Frame> {
        metric.check(s.dim())?;
        match metric {
            MetricSpec::Lem { alpha, beta } => {
                let spectral = Spectral::new(s.as_sym())?;
                let log = spectral.apply(MatFn::Log)?;
                let chart = oim_isometry(alpha, beta, &log);
                Ok(Frame {
                    metric,
                    chart,
                    kind: FrameKind::Lem { spectral },
                })
            }
            MetricSpec::Lcm { theta } => {
                let (power, factor) = if theta == 1.0 {
                    (None, cholesky_factor(s.as_matrix())?)
                } else {
                    let spectral = Spectral::new(s.as_sym())?;
                    let powered = spectral.apply(MatFn::Pow(theta))?;
                    (Some(spectral), cholesky_factor(&powered)?)
                };
                let chart = lcm_chart(theta, &factor)?;
                Ok(Frame {
                    metric,
                    chart,
                    kind: FrameKind::Lcm { power, factor },
                })
            }
        }
    }

    /// Linearize at `φ⁻¹(x)`; returns the frame and the SPD point.
    pub fn from_chart(point: &ChartPoint) -> Result<(Frame, SpdMatrix)> {
        Self::from_chart_matrix(point.metric, point.matrix())
    }

    pub(crate) fn from_chart_matrix(metric: MetricSpec, x: &DMatrix<f64>) -> Result<(Frame, SpdMatrix)> {
        let n = x.nrows();
        metric.check(n)?;
        match metric {
            MetricSpec::Lem { alpha, beta } => {
                let log = symmetrize(&oim_isometry_inv(alpha, beta, x));
                let log_spectral = Spectral::from_matrix(&log)?;
                let s = log_spectral.apply(MatFn::Exp)?;
                let spectral = log_spectral.mapped(MatFn::Exp)?;
                let frame = Frame {
                    metric,
                    chart: x.clone(),
                    kind: FrameKind::Lem { spectral },
                };
                Ok((frame, SpdMatrix::new_unchecked(s)))
            }
            MetricSpec::Lcm { theta } => {
                for i in 0..n {
                    for j in (i + 1)..n {
                        if x[(i, j)] != 0.0 {
                            return Err(Error::Domain(format!(
                                "LCM chart points are lower triangular; entry ({i}, {j}) is {}",
                                x[(i, j)]
                            )));
                        }
                    }
                }
                let mut factor = strict_lower(x) * theta;
                for i in 0..n {
                    factor[(i, i)] = (theta * x[(i, i)]).exp();
                }
                let powered = symmetrize(&(&factor * factor.transpose()));
                let (power, s) = if theta == 1.0 {
                    (None, powered)
                } else {
                    let pow_spectral = Spectral::from_matrix(&powered)?;
                    let s = pow_spectral.apply(MatFn::Pow(1.0 / theta))?;
                    (Some(pow_spectral.mapped(MatFn::Pow(1.0 / theta))?), s)
                };
                let frame = Frame {
                    metric,
                    chart: x.clone(),
                    kind: FrameKind::Lcm { power, factor },
                };
                Ok((frame, SpdMatrix::new_unchecked(s)))
            }
        }
    }

    pub fn metric(&self) -> MetricSpec {
        self.metric
    }

    pub fn chart(&self) -> &DMatrix<f64> {
        &self.chart
    }

    pub fn chart_point(&self) -> ChartPoint {
        ChartPoint {
            metric: self.metric,
            matrix: self.chart.clone(),
        }
    }

    /// `φ_{*,S}(V)`.
    pub fn push(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match (&self.kind, self.metric) {
            (FrameKind::Lem { spectral }, MetricSpec::Lem { alpha, beta }) => {
                let d = spectral.diff(MatFn::Log, v, false)?;
                Ok(oim_isometry(alpha, beta, &d))
            }
            (FrameKind::Lcm { power, factor }, MetricSpec::Lcm { theta }) => {
                let v = match power {
                    Some(sp) => sp.diff(MatFn::Pow(theta), v, false)?,
                    None => v.clone(),
                };
                let dk = chol_diff_factor(factor, &v);
                let mut out = strict_lower(&dk);
                for i in 0..out.nrows() {
                    out[(i, i)] = dk[(i, i)] / factor[(i, i)];
                }
                Ok(out / theta)
            }
            _ => unreachable!("frame kind always matches its metric"),
        }
    }

    /// `(φ⁻¹)_{*,φ(S)}(W)`: inverse of [`Frame::push`].
    pub fn pull(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match (&self.kind, self.metric) {
            (FrameKind::Lem { spectral }, MetricSpec::Lem { alpha, beta }) => {
                let w = oim_isometry_inv(alpha, beta, &symmetrize(w));
                spectral.diff(MatFn::Log, &w, true)
            }
            (FrameKind::Lcm { power, factor }, MetricSpec::Lcm { theta }) => {
                let mut dk = strict_lower(w) * theta;
                for i in 0..dk.nrows() {
                    dk[(i, i)] = theta * w[(i, i)] * factor[(i, i)];
                }
                let v = chol_inv_diff(factor, &dk);
                match power {
                    Some(sp) => sp.diff(MatFn::Pow(theta), &v, true),
                    None => Ok(symmetrize(&v)),
                }
            }
            _ => unreachable!("frame kind always matches its metric"),
        }
    }

    /// Frobenius adjoint of [`Frame::push`]: maps a chart-space gradient to a
    /// symmetric gradient at `S`.
    pub fn push_adjoint(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match (&self.kind, self.metric) {
            (FrameKind::Lem { spectral }, MetricSpec::Lem { alpha, beta }) => {
                let g = oim_isometry(alpha, beta, &symmetrize(g));
                spectral.diff(MatFn::Log, &g, false)
            }
            (FrameKind::Lcm { power, factor }, MetricSpec::Lcm { theta }) => {
                let n = g.nrows();
                let mut gk = strict_lower(g);
                for i in 0..n {
                    gk[(i, i)] = g[(i, i)] / factor[(i, i)];
                }
                gk /= theta;
                // dK = K·Φ(A), A = K⁻¹ V K⁻ᵀ
                let b = lower_half_diag(&(factor.transpose() * gk));
                let t = solve_lower_transpose(factor, &b.transpose());
                let c = solve_lower_transpose(factor, &t.transpose());
                let c = symmetrize(&c);
                match power {
                    Some(sp) => sp.diff(MatFn::Pow(theta), &c, false),
                    None => Ok(c),
                }
            }
            _ => unreachable!("frame kind always matches its metric"),
        }
    }

    /// Frobenius adjoint of [`Frame::pull`]: maps a symmetric gradient at `S`
    /// to the gradient with respect to the chart coordinates `φ(S)`.
    pub fn pull_adjoint(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match (&self.kind, self.metric) {
            (FrameKind::Lem { spectral }, MetricSpec::Lem { alpha, beta }) => {
                let d = spectral.diff(MatFn::Log, &symmetrize(g), true)?;
                Ok(oim_isometry_inv(alpha, beta, &d))
            }
            (FrameKind::Lcm { power, factor }, MetricSpec::Lcm { theta }) => {
                let g = symmetrize(g);
                let g = match power {
                    Some(sp) => sp.diff(MatFn::Pow(theta), &g, true)?,
                    None => g,
                };
                let h = &g * factor * 2.0;
                let mut out = strict_lower(&h) * theta;
                for i in 0..out.nrows() {
                    out[(i, i)] = theta * h[(i, i)] * factor[(i, i)];
                }
                Ok(out)
            }
            _ => unreachable!("frame kind always matches its metric"),
        }
    }
}

fn lcm_chart(theta: f64, factor: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok((strict_lower(factor) + dlog(factor)?) / theta)
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dims(a, b));
    }
    Ok(())
}

/// `φ(S)`.
pub fn phi(metric: MetricSpec, s: &SpdMatrix) -> Result<ChartPoint> {
    Ok(Frame::at(metric, s)?.chart_point())
}

/// `φ⁻¹(X)`.
pub fn phi_inv(x: &ChartPoint) -> Result<SpdMatrix> {
    Ok(Frame::from_chart(x)?.1)
}

/// `φ_{*,S}(V)`.
pub fn dphi(metric: MetricSpec, s: &SpdMatrix, v: &SymMatrix) -> Result<DMatrix<f64>> {
    check_same_dim(s.dim(), v.dim())?;
    Frame::at(metric, s)?.push(v.as_matrix())
}

/// `(φ⁻¹)_{*,X}(W)`.
pub fn dphi_inv(x: &ChartPoint, w: &DMatrix<f64>) -> Result<SymMatrix> {
    check_same_dim(x.dim(), w.nrows())?;
    let (frame, _) = Frame::from_chart(x)?;
    Ok(SymMatrix::new_unchecked(frame.pull(w)?))
}

/// `g_P(V, W) = ⟨φ_{*,P}V, φ_{*,P}W⟩`.
pub fn metric_at(metric: MetricSpec, p: &SpdMatrix, v: &SymMatrix, w: &SymMatrix) -> Result<f64> {
    check_same_dim(p.dim(), v.dim())?;
    check_same_dim(p.dim(), w.dim())?;
    let frame = Frame::at(metric, p)?;
    Ok(frame.push(v.as_matrix())?.dot(&frame.push(w.as_matrix())?))
}

/// `‖φ(S₁) − φ(S₂)‖_F`.
pub fn geodesic_dist(metric: MetricSpec, s1: &SpdMatrix, s2: &SpdMatrix) -> Result<f64> {
    check_same_dim(s1.dim(), s2.dim())?;
    let a = phi(metric, s1)?;
    let b = phi(metric, s2)?;
    Ok((a.matrix() - b.matrix()).norm())
}

/// `Exp_P(V) = φ⁻¹(φ(P) + φ_{*,P}V)`.
pub fn rie_exp(metric: MetricSpec, p: &SpdMatrix, v: &SymMatrix) -> Result<SpdMatrix> {
    check_same_dim(p.dim(), v.dim())?;
    let frame = Frame::at(metric, p)?;
    let target = frame.chart() + frame.push(v.as_matrix())?;
    Ok(Frame::from_chart_matrix(metric, &target)?.1)
}

/// `Log_P(Q) = (φ⁻¹)_{*,φ(P)}(φ(Q) − φ(P))`.
pub fn rie_log(metric: MetricSpec, p: &SpdMatrix, q: &SpdMatrix) -> Result<SymMatrix> {
    check_same_dim(p.dim(), q.dim())?;
    let frame = Frame::at(metric, p)?;
    let target = phi(metric, q)?;
    let diff = target.matrix() - frame.chart();
    Ok(SymMatrix::new_unchecked(frame.pull(&diff)?))
}

/// `Γ_{P→Q}(V) = (φ⁻¹)_{*,φ(Q)} ∘ φ_{*,P}(V)`.
pub fn parallel_transport(metric: MetricSpec, p: &SpdMatrix, q: &SpdMatrix, v: &SymMatrix) -> Result<SymMatrix> {
    check_same_dim(p.dim(), q.dim())?;
    check_same_dim(p.dim(), v.dim())?;
    let from = Frame::at(metric, p)?;
    let to = Frame::at(metric, q)?;
    Ok(SymMatrix::new_unchecked(to.pull(&from.push(v.as_matrix())?)?))
}

/// `S₁ ⊙ S₂ = φ⁻¹(φ(S₁) + φ(S₂))`.
pub fn group_mul(metric: MetricSpec, s1: &SpdMatrix, s2: &SpdMatrix) -> Result<SpdMatrix> {
    check_same_dim(s1.dim(), s2.dim())?;
    let sum = phi(metric, s1)?.matrix() + phi(metric, s2)?.matrix();
    Ok(Frame::from_chart_matrix(metric, &sum)?.1)
}

/// Group identity `φ⁻¹(0)`.
pub fn group_identity(metric: MetricSpec, n: usize) -> Result<SpdMatrix> {
    Ok(Frame::from_chart_matrix(metric, &DMatrix::zeros(n, n))?.1)
}

/// Group inverse `φ⁻¹(−φ(S))`.
pub fn group_inverse(metric: MetricSpec, s: &SpdMatrix) -> Result<SpdMatrix> {
    let neg = -phi(metric, s)?.matrix();
    Ok(Frame::from_chart_matrix(metric, &neg)?.1)
}

/// Differential at `P` of the left translation `S ↦ R ⊙ S` with
/// `R = Q ⊙ P⁻¹`, evaluated through the group operations rather than the
/// transport formula.
pub fn left_translation_diff(metric: MetricSpec, p: &SpdMatrix, q: &SpdMatrix, v: &SymMatrix) -> Result<SymMatrix> {
    check_same_dim(p.dim(), q.dim())?;
    check_same_dim(p.dim(), v.dim())?;
    let translation = group_mul(metric, q, &group_inverse(metric, p)?)?;
    let at_p = Frame::at(metric, p)?;
    let image = phi(metric, &translation)?.matrix() + at_p.chart();
    let (at_image, _) = Frame::from_chart_matrix(metric, &image)?;
    Ok(SymMatrix::new_unchecked(at_image.pull(&at_p.push(v.as_matrix())?)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{chol_diff, loewner, mlog, mpow, sym_eig};
    use crate::random::{random_spd, random_sym, seeded};
    use std::f64::consts::E;

    fn metrics(n: usize) -> Vec<MetricSpec> {
        let mut out: Vec<MetricSpec> = MetricSpec::beta_candidates(n)
            .iter()
            .map(|&b| MetricSpec::lem(1.0, b))
            .collect();
        out.push(MetricSpec::lem(2.0, 0.3));
        out.extend(THETA_CANDIDATES.iter().map(|&t| MetricSpec::lcm(t)));
        out.push(MetricSpec::lcm(-0.7));
        out
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn admissibility() {
        assert!(MetricSpec::lem(1.0, -0.5).check(2).is_err());
        assert!(MetricSpec::lem(1.0, -0.49).check(2).is_ok());
        assert!(MetricSpec::lem(1.0, -0.49).check(3).is_err());
        assert!(MetricSpec::lem(0.0, 1.0).check(2).is_err());
        assert!(MetricSpec::lcm(0.0).check(2).is_err());
        for n in 2..30 {
            for b in MetricSpec::beta_candidates(n) {
                MetricSpec::lem(1.0, b).check(n).unwrap();
            }
        }
    }

    #[test]
    fn chart_examples() {
        let c = phi(MetricSpec::STANDARD_LEM, &SpdMatrix::identity(3)).unwrap();
        assert_eq!(c.matrix().amax(), 0.0);

        // pure trace input under (1,1)-LEM: f(I₂) = √3·I₂
        let s = SpdMatrix::from_diagonal(&[E, E]).unwrap();
        let c = phi(MetricSpec::lem(1.0, 1.0), &s).unwrap();
        assert!((c.matrix() - DMatrix::identity(2, 2) * 3f64.sqrt()).amax() < 1e-14);
        assert!((c.matrix().norm_squared() - 6.0).abs() < 1e-13);

        let s = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let c = phi(MetricSpec::STANDARD_LCM, &s).unwrap();
        assert!((c.matrix()[(0, 0)] - 2f64.ln()).abs() < 1e-15);
        assert!((c.matrix()[(1, 1)] - 3f64.ln()).abs() < 1e-15);
        let back = phi_inv(&c).unwrap();
        assert!((back.as_matrix() - s.as_matrix()).amax() < 1e-14);

        let zero = ChartPoint::new(MetricSpec::STANDARD_LEM, DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(phi_inv(&zero).unwrap().as_matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn lcm_chart_must_be_lower_triangular() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(ChartPoint::new(MetricSpec::STANDARD_LCM, m.clone()).is_err());
        assert!(Frame::from_chart_matrix(MetricSpec::STANDARD_LCM, &m).is_err());
    }

    #[test]
    fn chart_round_trip() {
        let mut rng = seeded(21);
        for &n in &[2, 3, 5] {
            for metric in metrics(n) {
                for _ in 0..10 {
                    let s = random_spd(&mut rng, n, 100.0);
                    let back = phi_inv(&phi(metric, &s).unwrap()).unwrap();
                    assert!(rel(back.as_matrix(), s.as_matrix()) < 1e-9, "{metric}");
                }
            }
        }
    }

    #[test]
    fn differentials_at_identity() {
        let mut rng = seeded(22);
        let v = random_sym(&mut rng, 4, 1.0);
        let i = SpdMatrix::identity(4);
        let d = dphi(MetricSpec::STANDARD_LEM, &i, &v).unwrap();
        assert!((d - v.as_matrix()).amax() < 1e-15);
        for theta in [0.5, 1.0, 1.5, -2.0] {
            let d = dphi(MetricSpec::lcm(theta), &i, &v).unwrap();
            assert!((d - lower_half_diag(v.as_matrix())).amax() < 1e-14, "θ={theta}");
        }
    }

    #[test]
    fn differentials_match_finite_differences() {
        let mut rng = seeded(23);
        let h = 1e-5;
        for metric in metrics(4) {
            for _ in 0..5 {
                let s = random_spd(&mut rng, 4, 20.0);
                let v = random_sym(&mut rng, 4, 1.0);
                let analytic = dphi(metric, &s, &v).unwrap();
                let plus = SpdMatrix::new_unchecked(s.as_matrix() + v.as_matrix() * h);
                let minus = SpdMatrix::new_unchecked(s.as_matrix() - v.as_matrix() * h);
                let fd = (phi(metric, &plus).unwrap().matrix() - phi(metric, &minus).unwrap().matrix()) / (2.0 * h);
                assert!(rel(&analytic, &fd) < 1e-6, "{metric}: {}", rel(&analytic, &fd));
            }
        }
    }

    #[test]
    fn differential_inverse_and_adjoints() {
        let mut rng = seeded(24);
        for metric in metrics(5) {
            for _ in 0..5 {
                let s = random_spd(&mut rng, 5, 50.0);
                let v = random_sym(&mut rng, 5, 1.0);
                let frame = Frame::at(metric, &s).unwrap();
                let pushed = frame.push(v.as_matrix()).unwrap();
                let back = dphi_inv(&frame.chart_point(), &pushed).unwrap();
                assert!(rel(back.as_matrix(), v.as_matrix()) < 1e-9, "{metric}");

                // adjoint identities ⟨G, push V⟩ = ⟨push* G, V⟩ over chart-space G
                let mut g = random_sym(&mut rng, 5, 1.0).into_inner();
                if let MetricSpec::Lcm { .. } = metric {
                    g = strict_lower(&g) + diag_part(&g);
                }
                let lhs = g.dot(&pushed);
                let rhs = frame.push_adjoint(&g).unwrap().dot(v.as_matrix());
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{metric}: {lhs} vs {rhs}");

                let w = random_sym(&mut rng, 5, 1.0);
                let pulled = frame.pull(&g).unwrap();
                let lhs = w.as_matrix().dot(&pulled);
                let rhs = frame.pull_adjoint(w.as_matrix()).unwrap().dot(&g);
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{metric}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn metric_examples() {
        let mut rng = seeded(25);
        let v = random_sym(&mut rng, 3, 1.0);
        let w = random_sym(&mut rng, 3, 1.0);
        let g = metric_at(MetricSpec::STANDARD_LEM, &SpdMatrix::identity(3), &v, &w).unwrap();
        assert!((g - v.inner(&w)).abs() < 1e-14);

        let i2 = SymMatrix::identity(2);
        let g = metric_at(MetricSpec::lem(1.0, 1.0), &SpdMatrix::identity(2), &i2, &i2).unwrap();
        assert!((g - 6.0).abs() < 1e-13);

        let p = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let v = SymMatrix::from_diagonal(&[4.0, 9.0]);
        let g = metric_at(MetricSpec::STANDARD_LCM, &p, &v, &v).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
    }

    #[test]
    fn metric_matches_operator_table() {
        let mut rng = seeded(26);
        for _ in 0..20 {
            let p = random_spd(&mut rng, 4, 30.0);
            let v = random_sym(&mut rng, 4, 1.0);
            let w = random_sym(&mut rng, 4, 1.0);
            // LEM row: ⟨mlog_{*,P}V, mlog_{*,P}W⟩^{(α,β)}
            let eig = sym_eig(p.as_sym()).unwrap();
            let lambda = loewner(&eig.values, MatFn::Log);
            let dv = eig.hadamard_in_basis(&lambda, v.as_matrix());
            let dw = eig.hadamard_in_basis(&lambda, w.as_matrix());
            for beta in MetricSpec::beta_candidates(4) {
                let table = oim_inner(1.0, beta, &dv, &dw);
                let g = metric_at(MetricSpec::lem(1.0, beta), &p, &v, &w).unwrap();
                assert!((g - table).abs() <= 1e-9 * table.abs().max(1e-3));
            }
            // LCM row: Σ_{i>j} ṼᵢⱼW̃ᵢⱼ + Σⱼ ṼⱼⱼW̃ⱼⱼ/Lⱼⱼ²
            let l = cholesky_factor(p.as_matrix()).unwrap();
            let tv = chol_diff(&p, &v).unwrap();
            let tw = chol_diff(&p, &w).unwrap();
            let mut table = 0.0;
            for i in 0..4 {
                for j in 0..i {
                    table += tv[(i, j)] * tw[(i, j)];
                }
                table += tv[(i, i)] * tw[(i, i)] / (l[(i, i)] * l[(i, i)]);
            }
            let g = metric_at(MetricSpec::STANDARD_LCM, &p, &v, &w).unwrap();
            assert!((g - table).abs() <= 1e-9 * table.abs().max(1e-3));
        }
    }

    #[test]
    fn isometry_reproduces_oim_inner_product() {
        let mut rng = seeded(27);
        for &n in &[2, 3, 7] {
            for beta in MetricSpec::beta_candidates(n) {
                for alpha in [1.0, 2.5] {
                    let v = random_sym(&mut rng, n, 1.0);
                    let w = random_sym(&mut rng, n, 1.0);
                    let lhs = oim_isometry(alpha, beta, &v).dot(&oim_isometry(alpha, beta, &w));
                    let rhs = oim_inner(alpha, beta, &v, &w);
                    assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
                    let back = oim_isometry_inv(alpha, beta, &oim_isometry(alpha, beta, &v));
                    assert!(rel(&back, &v) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn operator_examples() {
        let mut rng = seeded(28);
        let p = random_spd(&mut rng, 3, 10.0);
        let v = random_sym(&mut rng, 3, 1.0);
        for metric in metrics(3) {
            assert!(rie_log(metric, &p, &p).unwrap().amax() < 1e-12);
            let t = parallel_transport(metric, &p, &p, &v).unwrap();
            assert!(rel(t.as_matrix(), v.as_matrix()) < 1e-12);
            assert!(geodesic_dist(metric, &p, &p).unwrap() == 0.0);
        }
        let s = SpdMatrix::from_diagonal(&[E, E]).unwrap();
        let d = geodesic_dist(MetricSpec::STANDARD_LEM, &SpdMatrix::identity(2), &s).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);

        let q = random_spd(&mut rng, 3, 10.0);
        let l = rie_log(MetricSpec::STANDARD_LEM, &SpdMatrix::identity(3), &q).unwrap();
        assert!(rel(l.as_matrix(), mlog(&q).unwrap().as_matrix()) < 1e-13);
    }

    #[test]
    fn exp_log_and_distance_consistency() {
        let mut rng = seeded(29);
        for &n in &[2, 3, 5] {
            for metric in metrics(n) {
                let p = random_spd(&mut rng, n, 20.0);
                let q = random_spd(&mut rng, n, 20.0);
                let l = rie_log(metric, &p, &q).unwrap();
                let back = rie_exp(metric, &p, &l).unwrap();
                assert!(rel(back.as_matrix(), q.as_matrix()) < 1e-8, "{metric}");
                let d = geodesic_dist(metric, &p, &q).unwrap();
                let g = metric_at(metric, &p, &l, &l).unwrap();
                assert!((d * d - g).abs() < 1e-8 * g, "{metric}");
                let v = random_sym(&mut rng, n, 0.5);
                let e = rie_exp(metric, &p, &v).unwrap();
                let back = rie_log(metric, &p, &e).unwrap();
                assert!(rel(back.as_matrix(), v.as_matrix()) < 1e-8, "{metric}");
            }
        }
    }

    #[test]
    fn group_structure() {
        let mut rng = seeded(30);
        for metric in metrics(3) {
            let s1 = random_spd(&mut rng, 3, 10.0);
            let s2 = random_spd(&mut rng, 3, 10.0);
            let e = group_identity(metric, 3).unwrap();
            assert!((e.as_matrix() - DMatrix::identity(3, 3)).amax() < 1e-15);
            let a = group_mul(metric, &s1, &s2).unwrap();
            let b = group_mul(metric, &s2, &s1).unwrap();
            assert!(rel(a.as_matrix(), b.as_matrix()) < 1e-12);
            let c = group_mul(metric, &s1, &e).unwrap();
            assert!(rel(c.as_matrix(), s1.as_matrix()) < 1e-12);
        }
        let s1 = random_spd(&mut rng, 3, 10.0);
        let s2 = random_spd(&mut rng, 3, 10.0);
        let prod = group_mul(MetricSpec::STANDARD_LEM, &s1, &s2).unwrap();
        let expected = crate::linalg::mexp(&mlog(&s1).unwrap().add(&mlog(&s2).unwrap())).unwrap();
        assert!(rel(prod.as_matrix(), expected.as_matrix()) < 1e-12);
    }

    #[test]
    fn left_translation_equals_transport() {
        let mut rng = seeded(31);
        for metric in metrics(4) {
            for _ in 0..5 {
                let p = random_spd(&mut rng, 4, 20.0);
                let q = random_spd(&mut rng, 4, 20.0);
                let v = random_sym(&mut rng, 4, 1.0);
                let a = parallel_transport(metric, &p, &q, &v).unwrap();
                let b = left_translation_diff(metric, &p, &q, &v).unwrap();
                assert!((a.as_matrix() - b.as_matrix()).amax() < 1e-10, "{metric}");
            }
        }
    }

    #[test]
    fn theta_scaling_law() {
        let mut rng = seeded(32);
        for theta in [0.5, 1.5, -1.0] {
            for _ in 0..10 {
                let s1 = random_spd(&mut rng, 4, 20.0);
                let s2 = random_spd(&mut rng, 4, 20.0);
                let d = geodesic_dist(MetricSpec::lcm(theta), &s1, &s2).unwrap();
                let p1 = mpow(&s1, theta).unwrap();
                let p2 = mpow(&s2, theta).unwrap();
                let d1 = geodesic_dist(MetricSpec::STANDARD_LCM, &p1, &p2).unwrap() / theta.abs();
                assert!((d - d1).abs() < 1e-9 * d1);
            }
        }
    }
    #[test]
    fn transport_isometry_anchor_and_bi_invariance() {
        let mut rng = seeded(33);
        for metric in metrics(3) {
            for _ in 0..5 {
                let p = random_spd(&mut rng, 3, 20.0);
                let q = random_spd(&mut rng, 3, 20.0);
                let r = random_spd(&mut rng, 3, 20.0);
                let v = random_sym(&mut rng, 3, 1.0);
                let w = random_sym(&mut rng, 3, 1.0);
                let tv = parallel_transport(metric, &p, &q, &v).unwrap();
                let tw = parallel_transport(metric, &p, &q, &w).unwrap();
                let before = metric_at(metric, &p, &v, &w).unwrap();
                let after = metric_at(metric, &q, &tv, &tw).unwrap();
                assert!((before - after).abs() < 1e-8 * before.abs().max(1.0), "{metric}");

                let direct = parallel_transport(metric, &p, &r, &v).unwrap();
                let via = parallel_transport(metric, &q, &r, &tv).unwrap();
                assert!((direct.as_matrix() - via.as_matrix()).amax() < 1e-9, "{metric}");

                let d = geodesic_dist(metric, &p, &q).unwrap();
                let rp = group_mul(metric, &r, &p).unwrap();
                let rq = group_mul(metric, &r, &q).unwrap();
                let dr = geodesic_dist(metric, &rp, &rq).unwrap();
                assert!((d - dr).abs() < 1e-9 * d, "{metric}");
            }
        }
    }
}
