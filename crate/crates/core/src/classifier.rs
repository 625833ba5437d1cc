//! SPD hyperplanes and the multinomial logistic regression heads built on them.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{lower_half_diag, oim_inner, oim_isometry, Frame, MetricSpec};
use crate::linalg::{
    cholesky_factor, dlog, mlog, mpow, strict_lower, symmetrize, SpdMatrix, SymMatrix,
};

/// Smallest accepted Frobenius norm of a hyperplane normal.
pub const MIN_NORMAL_NORM: f64 = 1e-12;

/// `φ_{*,I}(Ã)`: the normal pushed into chart coordinates.
pub fn identity_push(metric: MetricSpec, normal: &DMatrix<f64>) -> DMatrix<f64> {
    match metric {
        MetricSpec::Lem { alpha, beta } => oim_isometry(alpha, beta, normal),
        MetricSpec::Lcm { .. } => lower_half_diag(normal),
    }
}

/// Adjoint of [`identity_push`] over symmetric directions.
pub fn identity_push_adjoint(metric: MetricSpec, g: &DMatrix<f64>) -> DMatrix<f64> {
    match metric {
        MetricSpec::Lem { alpha, beta } => oim_isometry(alpha, beta, &symmetrize(g)),
        MetricSpec::Lcm { .. } => {
            let lower = strict_lower(g);
            let mut out = (&lower + lower.transpose()) * 0.5;
            for i in 0..g.nrows() {
                out[(i, i)] = 0.5 * g[(i, i)];
            }
            out
        }
    }
}

fn check_normal(normal: &SymMatrix) -> Result<()> {
    let norm = normal.norm();
    if !(norm > MIN_NORMAL_NORM) {
        return Err(Error::DegenerateHyperplane { norm });
    }
    Ok(())
}

/// `{S : ⟨Log_P S, Γ_{I→P}Ã⟩_P = 0}`.
#[derive(Clone, Debug)]
pub struct Hyperplane {
    metric: MetricSpec,
    shift: SpdMatrix,
    normal: SymMatrix,
    shift_chart: DMatrix<f64>,
    normal_chart: DMatrix<f64>,
}

impl Hyperplane {
    pub fn new(metric: MetricSpec, shift: SpdMatrix, normal: SymMatrix) -> Result<Self> {
        if shift.dim() != normal.dim() {
            return Err(Error::dims(shift.dim(), normal.dim()));
        }
        check_normal(&normal)?;
        let shift_chart = Frame::at(metric, &shift)?.chart().clone();
        let normal_chart = identity_push(metric, normal.as_matrix());
        Ok(Hyperplane {
            metric,
            shift,
            normal,
            shift_chart,
            normal_chart,
        })
    }

    pub fn metric(&self) -> MetricSpec {
        self.metric
    }

    pub fn shift(&self) -> &SpdMatrix {
        &self.shift
    }

    pub fn normal(&self) -> &SymMatrix {
        &self.normal
    }

    pub fn dim(&self) -> usize {
        self.shift.dim()
    }

    /// `‖φ_{*,I}Ã‖_F`, which equals `‖Γ_{I→P}Ã‖_P`.
    pub fn normal_norm(&self) -> f64 {
        self.normal_chart.norm()
    }

    /// The normal transported to the shift, `A = Γ_{I→P}(Ã)`.
    pub fn normal_at_shift(&self) -> Result<SymMatrix> {
        let (frame, _) = Frame::from_chart_matrix(self.metric, &self.shift_chart)?;
        Ok(SymMatrix::new_unchecked(frame.pull(&self.normal_chart)?))
    }

    fn project_chart(&self, chart: &DMatrix<f64>) -> f64 {
        (chart - &self.shift_chart).dot(&self.normal_chart)
    }
}

/// `⟨φ(S) − φ(P), φ_{*,I}(Ã)⟩`.
pub fn signed_projection(s: &SpdMatrix, h: &Hyperplane) -> Result<f64> {
    if s.dim() != h.dim() {
        return Err(Error::dims(h.dim(), s.dim()));
    }
    Ok(h.project_chart(Frame::at(h.metric, s)?.chart()))
}

/// Closed-form geodesic distance from `S` to the hyperplane.
pub fn margin_distance(s: &SpdMatrix, h: &Hyperplane) -> Result<f64> {
    Ok(signed_projection(s, h)?.abs() / h.normal_norm())
}

/// Membership with a tolerance relative to the normal's chart norm.
pub fn hyperplane_membership(s: &SpdMatrix, h: &Hyperplane, tol: f64) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("membership tolerance must be positive, got {tol}")));
    }
    Ok(signed_projection(s, h)?.abs() <= tol * h.normal_norm())
}

/// One SPD hyperplane per class under a shared metric.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlrHead {
    pub metric: MetricSpec,
    pub shifts: Vec<SpdMatrix>,
    pub normals: Vec<SymMatrix>,
}

impl MlrHead {
    pub fn new(metric: MetricSpec, shifts: Vec<SpdMatrix>, normals: Vec<SymMatrix>) -> Result<Self> {
        let head = MlrHead {
            metric,
            shifts,
            normals,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shifts.len() != self.normals.len() {
            return Err(Error::dims(
                format!("{} normals", self.shifts.len()),
                format!("{} normals", self.normals.len()),
            ));
        }
        if self.shifts.len() < 2 {
            return Err(Error::Config(format!("an MLR head needs at least 2 classes, got {}", self.shifts.len())));
        }
        let n = self.shifts[0].dim();
        self.metric.check(n)?;
        for (p, a) in self.shifts.iter().zip(&self.normals) {
            if p.dim() != n {
                return Err(Error::dims(n, p.dim()));
            }
            if a.dim() != n {
                return Err(Error::dims(n, a.dim()));
            }
            check_normal(a)?;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.shifts.len()
    }

    pub fn dim(&self) -> usize {
        self.shifts[0].dim()
    }

    pub fn hyperplane(&self, k: usize) -> Result<Hyperplane> {
        Hyperplane::new(self.metric, self.shifts[k].clone(), self.normals[k].clone())
    }
}

fn check_head_input(s: &SpdMatrix, n: usize) -> Result<()> {
    if s.dim() != n {
        return Err(Error::dims(n, s.dim()));
    }
    Ok(())
}

/// Logits through the generic chart formula.
pub fn mlr_logits_generic(s: &SpdMatrix, head: &MlrHead) -> Result<Vec<f64>> {
    check_head_input(s, head.dim())?;
    let x = Frame::at(head.metric, s)?.chart().clone();
    head.shifts
        .iter()
        .zip(&head.normals)
        .map(|(p, a)| {
            let y = Frame::at(head.metric, p)?.chart().clone();
            Ok((&x - y).dot(&identity_push(head.metric, a.as_matrix())))
        })
        .collect()
}

/// `α⟨ΔL, Ã_k⟩ + β·tr(ΔL)·tr(Ã_k)` with `ΔL = mlog S − mlog P_k`.
pub fn mlr_logits_lem(s: &SpdMatrix, head: &MlrHead, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    check_head_input(s, head.dim())?;
    MetricSpec::lem(alpha, beta).check(s.dim())?;
    let log_s = mlog(s)?;
    head.shifts
        .iter()
        .zip(&head.normals)
        .map(|(p, a)| {
            let delta = log_s.as_matrix() - mlog(p)?.as_matrix();
            Ok(oim_inner(alpha, beta, &delta, a.as_matrix()))
        })
        .collect()
}

/// `(1/θ)⟨⌊K̃⌋ − ⌊L̃_k⌋ + dlog K̃ − dlog L̃_k, ⌊Ã_k⌋ + ½𝔻(Ã_k)⟩`,
/// `K̃ = chol(S^θ)`, `L̃_k = chol(P_k^θ)`.
pub fn mlr_logits_lcm(s: &SpdMatrix, head: &MlrHead, theta: f64) -> Result<Vec<f64>> {
    check_head_input(s, head.dim())?;
    MetricSpec::lcm(theta).check(s.dim())?;
    let lower_log = |m: &SpdMatrix| -> Result<DMatrix<f64>> {
        let k = cholesky_factor(mpow(m, theta)?.as_matrix())?;
        Ok(strict_lower(&k) + dlog(&k)?)
    };
    let ks = lower_log(s)?;
    head.shifts
        .iter()
        .zip(&head.normals)
        .map(|(p, a)| {
            let x = &ks - lower_log(p)?;
            Ok(x.dot(&lower_half_diag(a.as_matrix())) / theta)
        })
        .collect()
}

/// Matrix logarithm, flattening, and an affine map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogEigHead {
    /// One row of length `n²` per class.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LogEigHead {
    pub fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        let head = LogEigHead { weights, biases };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() < 2 {
            return Err(Error::Config(format!("a LogEig head needs at least 2 classes, got {}", self.weights.len())));
        }
        if self.biases.len() != self.weights.len() {
            return Err(Error::dims(self.weights.len(), self.biases.len()));
        }
        let width = self.weights[0].len();
        let n = (width as f64).sqrt().round() as usize;
        if n * n != width || n == 0 {
            return Err(Error::Config(format!("LogEig weight length {width} is not a square")));
        }
        if let Some(bad) = self.weights.iter().find(|w| w.len() != width) {
            return Err(Error::dims(width, bad.len()));
        }
        Ok(())
    }

    /// The LogEig head equivalent to an LEM(1, 0) MLR head:
    /// `a_k = vec(Ã_k)`, `b_k = ⟨Ã_k, mlog P_k⟩`.
    pub fn from_lem_head(head: &MlrHead) -> Result<Self> {
        let mut weights = Vec::with_capacity(head.classes());
        let mut biases = Vec::with_capacity(head.classes());
        for (p, a) in head.shifts.iter().zip(&head.normals) {
            weights.push(a.vectorize());
            biases.push(a.inner(&mlog(p)?));
        }
        LogEigHead::new(weights, biases)
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        (self.weights[0].len() as f64).sqrt().round() as usize
    }

    /// Logits from an already-flattened log matrix.
    pub fn logits_from_log(&self, log: &SymMatrix) -> Result<Vec<f64>> {
        if log.dim() != self.dim() {
            return Err(Error::dims(self.dim(), log.dim()));
        }
        let x = log.vectorize();
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(&x).map(|(u, v)| u * v).sum::<f64>() - b)
            .collect())
    }
}

/// `⟨a_k, vec(mlog S)⟩ − b_k`.
pub fn logeig_mlr(s: &SpdMatrix, head: &LogEigHead) -> Result<Vec<f64>> {
    if s.dim() != head.dim() {
        return Err(Error::dims(head.dim(), s.dim()));
    }
    head.logits_from_log(&mlog(s)?)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Grid over the open cone `{[[x, y], [y, z]] : x, z > 0, xz > y²}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudGrid {
    /// Grid points per axis.
    pub resolution: usize,
    /// `x, z ∈ (0, extent]`, `y ∈ [−extent, extent]`.
    pub extent: f64,
    /// Margin-distance threshold for emission.
    pub band: f64,
}

impl Default for CloudGrid {
    fn default() -> Self {
        CloudGrid {
            resolution: 60,
            extent: 3.0,
            band: 0.02,
        }
    }
}

/// A 2×2 SPD matrix as cone coordinates plus exact-membership flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub on_plane: bool,
}

impl CloudPoint {
    pub fn matrix(&self) -> SpdMatrix {
        SpdMatrix::new_unchecked(DMatrix::from_row_slice(2, 2, &[self.x, self.y, self.y, self.z]))
    }

    fn from_matrix(m: &DMatrix<f64>, on_plane: bool) -> Self {
        CloudPoint {
            x: m[(0, 0)],
            y: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            z: m[(1, 1)],
            on_plane,
        }
    }
}

/// Tolerance for the `on_plane` flag.
pub const CLOUD_MEMBERSHIP_TOL: f64 = 1e-9;

/// Points of the SPD(2) cone near the hyperplane: grid points whose margin is
/// below `grid.band`, their chart projections onto the hyperplane (flagged
/// as members when they land inside the grid box), and the shift itself.
pub fn hyperplane_cloud(h: &Hyperplane, grid: &CloudGrid) -> Result<Vec<CloudPoint>> {
    if h.dim() != 2 {
        return Err(Error::UnsupportedDimension(h.dim()));
    }
    if grid.resolution < 2 || !(grid.extent > 0.0) || !(grid.band > 0.0) {
        return Err(Error::Config(format!("invalid cloud grid {grid:?}")));
    }
    let r = grid.resolution;
    let step_pos = grid.extent / r as f64;
    let step_off = 2.0 * grid.extent / (r - 1) as f64;
    let norm = h.normal_norm();
    let unit = &h.normal_chart / norm;
    let in_box = |p: &CloudPoint| {
        p.x > 0.0 && p.z > 0.0 && p.x <= grid.extent && p.z <= grid.extent && p.y.abs() <= grid.extent && p.x * p.z > p.y * p.y
    };

    let mut points = vec![CloudPoint::from_matrix(h.shift.as_matrix(), true)];
    for i in 1..=r {
        let x = i as f64 * step_pos;
        for k in 1..=r {
            let z = k as f64 * step_pos;
            for j in 0..r {
                let y = -grid.extent + j as f64 * step_off;
                if x * z <= y * y {
                    continue;
                }
                let s = SpdMatrix::new_unchecked(DMatrix::from_row_slice(2, 2, &[x, y, y, z]));
                let chart = match Frame::at(h.metric, &s) {
                    Ok(f) => f.chart().clone(),
                    Err(_) => continue,
                };
                let proj = h.project_chart(&chart);
                if proj.abs() / norm >= grid.band {
                    continue;
                }
                points.push(CloudPoint {
                    x,
                    y,
                    z,
                    on_plane: proj.abs() <= CLOUD_MEMBERSHIP_TOL * norm,
                });
                let foot = &chart - &unit * (proj / norm);
                if let Ok((_, member)) = Frame::from_chart_matrix(h.metric, &foot) {
                    let p = CloudPoint::from_matrix(member.as_matrix(), true);
                    if in_box(&p) {
                        points.push(p);
                    }
                }
            }
        }
    }
    Ok(points)
}

fn metric_header(metric: MetricSpec) -> String {
    match metric {
        MetricSpec::Lem { alpha, beta } => format!("metric=lem params=alpha={alpha},beta={beta}"),
        MetricSpec::Lcm { theta } => format!("metric=lcm params=theta={theta}"),
    }
}

/// Writes `# n=2 metric=<kind> params=<...>` followed by `x y z flag` lines.
pub fn write_cloud<W: Write>(mut out: W, h: &Hyperplane, points: &[CloudPoint]) -> Result<()> {
    let mut text = format!("# n=2 {}\n", metric_header(h.metric));
    for p in points {
        writeln!(text, "{} {} {} {}", p.x, p.y, p.z, u8::from(p.on_plane)).expect("writing to a String");
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}
