//! SPDNet layers (BiMap, ReEig, LogEig) with reverse-mode gradients, ending in
//! an SPD MLR or LogEig head.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{identity_push, identity_push_adjoint, softmax, LogEigHead, MlrHead};
use crate::error::{Error, Result};
use crate::geometry::{Frame, MetricSpec};
use crate::linalg::{
    from_rows, loewner_with, sym_eig, symmetrize, to_rows, EigenPair, MatFn, Spectral, SpdMatrix, SymMatrix,
};
use crate::random::{gaussian_matrix, random_sym, seeded};

pub const DEFAULT_REEIG_EPS: f64 = 1e-4;
/// Tolerance on `W Wᵀ = I` for BiMap weights.
pub const STIEFEL_TOLERANCE: f64 = 1e-8;

/// Row semi-orthogonal `out × in` weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct BiMapWeight(pub(crate) DMatrix<f64>);

impl BiMapWeight {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.nrows() > w.ncols() {
            return Err(Error::Config(format!(
                "BiMap weight must be out × in with out ≤ in, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let gap = (&w * w.transpose() - DMatrix::identity(w.nrows(), w.nrows())).amax();
        if !(gap <= STIEFEL_TOLERANCE) {
            return Err(Error::Domain(format!("BiMap weight is not row semi-orthogonal: ‖WWᵀ − I‖_max = {gap:e}")));
        }
        Ok(BiMapWeight(w))
    }

    pub(crate) fn new_unchecked(w: DMatrix<f64>) -> Self {
        BiMapWeight(w)
    }

    /// Transposed orthogonal factor of a seeded Gaussian `in × out` matrix.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, out_dim: usize, in_dim: usize) -> Self {
        let g = gaussian_matrix(rng, in_dim, out_dim, 1.0);
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..out_dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        BiMapWeight(q.transpose())
    }

    pub fn out_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for BiMapWeight {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        BiMapWeight::new(from_rows(&rows)?)
    }
}

impl From<BiMapWeight> for Vec<Vec<f64>> {
    fn from(w: BiMapWeight) -> Self {
        to_rows(&w.0)
    }
}

/// `W S Wᵀ`.
pub fn bimap_forward(w: &BiMapWeight, s: &SpdMatrix) -> Result<SpdMatrix> {
    if w.in_dim() != s.dim() {
        return Err(Error::dims(w.in_dim(), s.dim()));
    }
    Ok(SpdMatrix::new_unchecked(symmetrize(&(w.as_matrix() * s.as_matrix() * w.as_matrix().transpose()))))
}

/// `U max(Σ, εI) Uᵀ`.
pub fn reeig_forward(eps: f64, s: &SpdMatrix) -> Result<SpdMatrix> {
    Ok(reeig_with_eigen(eps, s)?.0)
}

fn reeig_with_eigen(eps: f64, s: &SpdMatrix) -> Result<(SpdMatrix, EigenPair)> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("ReEig threshold must be positive, got {eps}")));
    }
    let eig = sym_eig(s.as_sym())?;
    let out = eig.map_values(|x| x.max(eps));
    Ok((SpdMatrix::new_unchecked(out), eig))
}

pub fn logeig_forward(s: &SpdMatrix) -> Result<SymMatrix> {
    crate::linalg::mlog(s)
}

/// Which classifier ends the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "lowercase")]
pub enum HeadSpec {
    Mlr { metric: MetricSpec },
    LogEig,
}

impl HeadSpec {
    pub fn label(&self) -> String {
        match self {
            HeadSpec::Mlr { metric } => format!("SPD MLR {metric}"),
            HeadSpec::LogEig => "LogEig MLR".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    BiMap { out_dim: usize },
    ReEig { eps: f64 },
    LogEig,
    Head(HeadSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `[d₀, d₁, …, d_L]`; one BiMap per consecutive pair.
    pub widths: Vec<usize>,
    pub reeig_eps: f64,
    /// Also rectify after the last BiMap.
    #[serde(default)]
    pub reeig_after_last: bool,
    pub head: HeadSpec,
    pub classes: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(widths: Vec<usize>, head: HeadSpec, classes: usize, seed: u64) -> Self {
        NetworkConfig {
            widths,
            reeig_eps: DEFAULT_REEIG_EPS,
            reeig_after_last: false,
            head,
            classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!("widths must be non-empty and positive, got {:?}", self.widths)));
        }
        if let Some(pair) = self.widths.windows(2).find(|p| p[1] > p[0]) {
            return Err(Error::Config(format!("BiMap cannot increase width: {} -> {}", pair[0], pair[1])));
        }
        if !(self.reeig_eps > 0.0) {
            return Err(Error::Config(format!("reeig_eps must be positive, got {}", self.reeig_eps)));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if let HeadSpec::Mlr { metric } = self.head {
            metric.check(self.output_dim())?;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated widths are non-empty")
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let maps = self.widths.len() - 1;
        let mut layers = Vec::new();
        for (i, &out_dim) in self.widths.iter().skip(1).enumerate() {
            layers.push(LayerSpec::BiMap { out_dim });
            if i + 1 < maps || self.reeig_after_last {
                layers.push(LayerSpec::ReEig { eps: self.reeig_eps });
            }
        }
        if self.head == HeadSpec::LogEig {
            layers.push(LayerSpec::LogEig);
        }
        layers.push(LayerSpec::Head(self.head));
        layers
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadParams {
    Mlr(MlrHead),
    LogEig(LogEigHead),
}

/// All trainable parameters. The version counter advances on every mutable
/// borrow so that tapes from earlier forward passes are detected as stale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkParams {
    bimaps: Vec<BiMapWeight>,
    head: HeadParams,
    #[serde(skip)]
    version: u64,
}

impl NetworkParams {
    pub fn new(config: &NetworkConfig, bimaps: Vec<BiMapWeight>, head: HeadParams) -> Result<Self> {
        let params = NetworkParams { bimaps, head, version: 0 };
        params.check(config)?;
        Ok(params)
    }

    /// Seeded initialization: Stiefel BiMaps, identity shifts, normals
    /// Gaussian/n, LogEig weights Gaussian/n², zero biases.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let bimaps = config
            .widths
            .windows(2)
            .map(|p| BiMapWeight::random(&mut rng, p[1], p[0]))
            .collect();
        let n = config.output_dim();
        let c = config.classes;
        let head = match config.head {
            HeadSpec::Mlr { metric } => HeadParams::Mlr(MlrHead::new(
                metric,
                vec![SpdMatrix::identity(n); c],
                (0..c).map(|_| random_sym(&mut rng, n, 1.0 / n as f64)).collect(),
            )?),
            HeadSpec::LogEig => {
                let weights = (0..c)
                    .map(|_| gaussian_matrix(&mut rng, 1, n * n, 1.0 / (n * n) as f64).as_slice().to_vec())
                    .collect();
                HeadParams::LogEig(LogEigHead::new(weights, vec![0.0; c])?)
            }
        };
        NetworkParams::new(config, bimaps, head)
    }

    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        config.validate()?;
        if self.bimaps.len() + 1 != config.widths.len() {
            return Err(Error::dims(
                format!("{} BiMap layers", config.widths.len() - 1),
                format!("{} BiMap layers", self.bimaps.len()),
            ));
        }
        for (i, (w, pair)) in self.bimaps.iter().zip(config.widths.windows(2)).enumerate() {
            if w.in_dim() != pair[0] || w.out_dim() != pair[1] {
                return Err(Error::dims(
                    format!("{}x{}", pair[1], pair[0]),
                    format!("{}x{}", w.out_dim(), w.in_dim()),
                )
                .at_layer(i));
            }
        }
        let n = config.output_dim();
        match (&self.head, config.head) {
            (HeadParams::Mlr(h), HeadSpec::Mlr { metric }) => {
                h.validate()?;
                if h.metric != metric || h.dim() != n || h.classes() != config.classes {
                    return Err(Error::Config("MLR head does not match the configuration".into()));
                }
            }
            (HeadParams::LogEig(h), HeadSpec::LogEig) => {
                h.validate()?;
                if h.dim() != n || h.classes() != config.classes {
                    return Err(Error::Config("LogEig head does not match the configuration".into()));
                }
            }
            _ => return Err(Error::Config("head kind does not match the configuration".into())),
        }
        Ok(())
    }

    pub fn bimaps(&self) -> &[BiMapWeight] {
        &self.bimaps
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    pub fn bimaps_mut(&mut self) -> &mut [BiMapWeight] {
        self.version += 1;
        &mut self.bimaps
    }

    pub fn head_mut(&mut self) -> &mut HeadParams {
        self.version += 1;
        &mut self.head
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Per-parameter-set quantities shared by every sample of a batch.
    pub fn prepare(&self) -> Result<PreparedHead> {
        match &self.head {
            HeadParams::Mlr(h) => {
                let mut shift_charts = Vec::with_capacity(h.classes());
                let mut normal_charts = Vec::with_capacity(h.classes());
                let mut shift_adjoints = Vec::with_capacity(h.classes());
                for (p, a) in h.shifts.iter().zip(&h.normals) {
                    let frame = Frame::at(h.metric, p)?;
                    let normal = identity_push(h.metric, a.as_matrix());
                    shift_adjoints.push(frame.push_adjoint(&normal)?);
                    shift_charts.push(frame.chart().clone());
                    normal_charts.push(normal);
                }
                Ok(PreparedHead::Mlr {
                    metric: h.metric,
                    shift_charts,
                    normal_charts,
                    shift_adjoints,
                    version: self.version,
                })
            }
            HeadParams::LogEig(_) => Ok(PreparedHead::LogEig { version: self.version }),
        }
    }
}

/// Chart images of the shifts, chart normals, and `φ_{*,P_k}^*(φ_{*,I}Ã_k)`.
#[derive(Clone, Debug)]
pub enum PreparedHead {
    Mlr {
        metric: MetricSpec,
        shift_charts: Vec<DMatrix<f64>>,
        normal_charts: Vec<DMatrix<f64>>,
        shift_adjoints: Vec<DMatrix<f64>>,
        version: u64,
    },
    LogEig {
        version: u64,
    },
}

impl PreparedHead {
    fn version(&self) -> u64 {
        match self {
            PreparedHead::Mlr { version, .. } | PreparedHead::LogEig { version } => *version,
        }
    }
}

#[derive(Clone, Debug)]
enum LayerCache {
    BiMap { input: DMatrix<f64> },
    ReEig { eig: EigenPair, eps: f64 },
    LogEig { spectral: Spectral },
    Mlr { frame: Frame },
    LogEigHead { log: SymMatrix },
}

/// Forward-pass values needed by [`network_backward`].
#[derive(Clone, Debug)]
pub struct GradientTape {
    caches: Vec<LayerCache>,
    logits: Vec<f64>,
    version: u64,
}

impl GradientTape {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

/// Euclidean gradients; symmetric parameters carry symmetric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub bimaps: Vec<DMatrix<f64>>,
    pub head: HeadGradients,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadGradients {
    Mlr {
        shifts: Vec<DMatrix<f64>>,
        normals: Vec<DMatrix<f64>>,
    },
    LogEig {
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        let bimaps = params
            .bimaps
            .iter()
            .map(|w| DMatrix::zeros(w.out_dim(), w.in_dim()))
            .collect();
        let head = match &params.head {
            HeadParams::Mlr(h) => {
                let n = h.dim();
                HeadGradients::Mlr {
                    shifts: vec![DMatrix::zeros(n, n); h.classes()],
                    normals: vec![DMatrix::zeros(n, n); h.classes()],
                }
            }
            HeadParams::LogEig(h) => HeadGradients::LogEig {
                weights: vec![vec![0.0; h.weights[0].len()]; h.classes()],
                biases: vec![0.0; h.classes()],
            },
        };
        Gradients { bimaps, head }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.bimaps.iter_mut().zip(&other.bimaps) {
            *a += b;
        }
        match (&mut self.head, &other.head) {
            (HeadGradients::Mlr { shifts, normals }, HeadGradients::Mlr { shifts: s2, normals: n2 }) => {
                for (a, b) in shifts.iter_mut().zip(s2) {
                    *a += b;
                }
                for (a, b) in normals.iter_mut().zip(n2) {
                    *a += b;
                }
            }
            (HeadGradients::LogEig { weights, biases }, HeadGradients::LogEig { weights: w2, biases: b2 }) => {
                for (a, b) in weights.iter_mut().zip(w2) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
                for (x, y) in biases.iter_mut().zip(b2) {
                    *x += y;
                }
            }
            _ => panic!("gradient head kinds differ"),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.bimaps {
            *a *= c;
        }
        match &mut self.head {
            HeadGradients::Mlr { shifts, normals } => {
                shifts.iter_mut().chain(normals.iter_mut()).for_each(|m| *m *= c);
            }
            HeadGradients::LogEig { weights, biases } => {
                weights.iter_mut().flatten().chain(biases.iter_mut()).for_each(|x| *x *= c);
            }
        }
    }

    /// Largest absolute entry over every tensor.
    pub fn max_abs(&self) -> f64 {
        let mut m = self.bimaps.iter().map(|a| a.amax()).fold(0.0, f64::max);
        match &self.head {
            HeadGradients::Mlr { shifts, normals } => {
                m = shifts.iter().chain(normals).map(|a| a.amax()).fold(m, f64::max);
            }
            HeadGradients::LogEig { weights, biases } => {
                m = weights.iter().flatten().chain(biases).map(|x| x.abs()).fold(m, f64::max);
            }
        }
        m
    }
}

/// Forward pass with a freshly prepared head.
pub fn network_forward(config: &NetworkConfig, params: &NetworkParams, s: &SpdMatrix) -> Result<GradientTape> {
    let prepared = params.prepare()?;
    forward_prepared(config, params, &prepared, s)
}

pub fn forward_prepared(
    config: &NetworkConfig,
    params: &NetworkParams,
    prepared: &PreparedHead,
    s: &SpdMatrix,
) -> Result<GradientTape> {
    if prepared.version() != params.version {
        return Err(Error::StaleTape {
            tape: prepared.version(),
            params: params.version,
        });
    }
    if s.dim() != config.input_dim() {
        return Err(Error::dims(config.input_dim(), s.dim()));
    }
    let mut caches = Vec::new();
    let mut current = s.clone();
    let mut log: Option<SymMatrix> = None;
    let mut bimap = 0;
    let mut logits = Vec::new();
    for (index, layer) in config.layers().into_iter().enumerate() {
        match layer {
            LayerSpec::BiMap { .. } => {
                let w = &params.bimaps[bimap];
                let next = bimap_forward(w, &current).map_err(|e| e.at_layer(index))?;
                caches.push(LayerCache::BiMap {
                    input: current.into_inner(),
                });
                current = next;
                bimap += 1;
            }
            LayerSpec::ReEig { eps } => {
                let (next, eig) = reeig_with_eigen(eps, &current).map_err(|e| e.at_layer(index))?;
                caches.push(LayerCache::ReEig { eig, eps });
                current = next;
            }
            LayerSpec::LogEig => {
                let spectral = Spectral::new(current.as_sym()).map_err(|e| e.at_layer(index))?;
                let value = spectral.apply(MatFn::Log).map_err(|e| e.at_layer(index))?;
                caches.push(LayerCache::LogEig { spectral });
                log = Some(SymMatrix::new_unchecked(value));
            }
            LayerSpec::Head(_) => match (&params.head, prepared) {
                (HeadParams::Mlr(_), PreparedHead::Mlr { metric, shift_charts, normal_charts, .. }) => {
                    let frame = Frame::at(*metric, &current).map_err(|e| e.at_layer(index))?;
                    logits = shift_charts
                        .iter()
                        .zip(normal_charts)
                        .map(|(y, n)| (frame.chart() - y).dot(n))
                        .collect();
                    caches.push(LayerCache::Mlr { frame });
                }
                (HeadParams::LogEig(h), PreparedHead::LogEig { .. }) => {
                    let x = log.take().ok_or_else(|| Error::Contract("LogEig head without a LogEig layer".into()))?;
                    logits = h.logits_from_log(&x).map_err(|e| e.at_layer(index))?;
                    caches.push(LayerCache::LogEigHead { log: x });
                }
                _ => return Err(Error::Contract("prepared head does not match parameters".into())),
            },
        }
    }
    if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::NumericalAbort {
            epoch: 0,
            batch: 0,
            detail: format!("non-finite logit {bad}"),
        });
    }
    Ok(GradientTape {
        caches,
        logits,
        version: params.version,
    })
}

/// Reverse pass from `∂loss/∂logits`.
pub fn network_backward(tape: &GradientTape, params: &NetworkParams, loss_grad: &[f64]) -> Result<Gradients> {
    backward_prepared(tape, params, &params.prepare()?, loss_grad)
}

pub fn backward_prepared(
    tape: &GradientTape,
    params: &NetworkParams,
    prepared: &PreparedHead,
    loss_grad: &[f64],
) -> Result<Gradients> {
    for version in [tape.version, prepared.version()] {
        if version != params.version {
            return Err(Error::StaleTape {
                tape: version,
                params: params.version,
            });
        }
    }
    if loss_grad.len() != tape.logits.len() {
        return Err(Error::dims(tape.logits.len(), loss_grad.len()));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut bimap = params.bimaps.len();
    let mut upstream: Option<DMatrix<f64>> = None;
    for cache in tape.caches.iter().rev() {
        match cache {
            LayerCache::Mlr { frame } => {
                let (
                    HeadParams::Mlr(h),
                    HeadGradients::Mlr { shifts, normals },
                    PreparedHead::Mlr {
                        shift_charts,
                        normal_charts,
                        shift_adjoints,
                        ..
                    },
                ) = (&params.head, &mut grads.head, prepared)
                else {
                    return Err(Error::Contract("gradient head kind mismatch".into()));
                };
                let mut chart_grad = DMatrix::zeros(h.dim(), h.dim());
                for k in 0..h.classes() {
                    let g = loss_grad[k];
                    chart_grad += &normal_charts[k] * g;
                    shifts[k] = &shift_adjoints[k] * -g;
                    normals[k] = identity_push_adjoint(h.metric, &(frame.chart() - &shift_charts[k])) * g;
                }
                upstream = Some(symmetrize(&frame.push_adjoint(&chart_grad)?));
            }
            LayerCache::LogEigHead { log } => {
                let HeadParams::LogEig(h) = &params.head else {
                    return Err(Error::Contract("gradient head kind mismatch".into()));
                };
                let HeadGradients::LogEig { weights, biases } = &mut grads.head else {
                    return Err(Error::Contract("gradient head kind mismatch".into()));
                };
                let x = log.vectorize();
                let n = h.dim();
                let mut dx = vec![0.0; n * n];
                for k in 0..h.classes() {
                    let g = loss_grad[k];
                    weights[k] = x.iter().map(|v| v * g).collect();
                    biases[k] = -g;
                    for (d, a) in dx.iter_mut().zip(&h.weights[k]) {
                        *d += g * a;
                    }
                }
                upstream = Some(symmetrize(&DMatrix::from_row_slice(n, n, &dx)));
            }
            LayerCache::LogEig { spectral } => {
                let g = upstream.take().expect("head precedes LogEig in reverse order");
                upstream = Some(spectral.diff(MatFn::Log, &g, false)?);
            }
            LayerCache::ReEig { eig, eps } => {
                let g = upstream.take().expect("head precedes ReEig in reverse order");
                let eps = *eps;
                let lambda = loewner_with(
                    &eig.values,
                    |x| if x > eps { 1.0 } else { 0.0 },
                    |a, b| (a.max(eps) - b.max(eps)) / (a - b),
                );
                upstream = Some(eig.hadamard_in_basis(&lambda, &g));
            }
            LayerCache::BiMap { input } => {
                let g = upstream.take().expect("head precedes BiMap in reverse order");
                bimap -= 1;
                let w = params.bimaps[bimap].as_matrix();
                grads.bimaps[bimap] = &g * w * input * 2.0;
                upstream = Some(symmetrize(&(w.transpose() * &g * w)));
            }
        }
    }
    Ok(grads)
}

/// `−log softmax(logits)[label]` and its gradient `softmax − onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Domain(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

/// Summed cross-entropy and summed gradients over a batch.
pub fn batch_loss_and_grad(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &[(&SpdMatrix, usize)],
) -> Result<(f64, Gradients)> {
    use rayon::prelude::*;
    let prepared = params.prepare()?;
    let per_sample: Vec<Result<(f64, Gradients)>> = batch
        .par_iter()
        .map(|(s, label)| {
            let tape = forward_prepared(config, params, &prepared, s)?;
            let (loss, grad) = cross_entropy(tape.logits(), *label)?;
            Ok((loss, backward_prepared(&tape, params, &prepared, &grad)?))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for item in per_sample {
        let (loss, g) = item?;
        total += loss;
        grads.add_assign(&g);
    }
    Ok((total, grads))
}

/// Logits for every sample, evaluated in parallel.
pub fn predict_logits(config: &NetworkConfig, params: &NetworkParams, samples: &[&SpdMatrix]) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let prepared = params.prepare()?;
    samples
        .par_iter()
        .map(|s| Ok(forward_prepared(config, params, &prepared, s)?.logits))
        .collect()
}
