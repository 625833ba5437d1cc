//! Self-checks: finite-difference gradient verification and the lockstep
//! comparison of an LEM(1,0) head with a plain LogEig MLR.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricSpec;
use crate::harness::dataset::synth_generate;
use crate::linalg::{SpdMatrix, SymMatrix};
use crate::network::{batch_loss_and_grad, Gradients, HeadGradients, HeadParams, HeadSpec, NetworkConfig, NetworkParams};
use crate::optim::{Optimizer, OptimizerConfig, SpdRule};
use crate::random::{random_spd, random_sym, seeded};

/// Largest input dimension the gradient check accepts.
pub const GRADCHECK_MAX_DIM: usize = 12;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Floor on the denominator of the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSpec {
    pub widths: Vec<usize>,
    pub heads: Vec<HeadSpec>,
    pub classes: usize,
    pub batch: usize,
    /// Large enough that some eigenvalues are clamped.
    pub reeig_eps: f64,
    pub step: f64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            widths: vec![10, 8, 5],
            heads: vec![
                HeadSpec::LogEig,
                HeadSpec::Mlr { metric: MetricSpec::lem(1.0, 0.0) },
                HeadSpec::Mlr { metric: MetricSpec::lem(1.0, 1.0) },
                HeadSpec::Mlr { metric: MetricSpec::lcm(1.0) },
                HeadSpec::Mlr { metric: MetricSpec::lcm(0.5) },
            ],
            classes: 3,
            batch: 4,
            reeig_eps: 0.3,
            step: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub head: String,
    pub tensor: String,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| !(t.rel_error < self.tolerance)).collect()
    }
}

/// A single coordinate perturbation of one tensor.
#[derive(Clone, Copy)]
enum Slot {
    BiMap(usize),
    Shift(usize),
    Normal(usize),
    Weight(usize),
    Bias,
}

impl Slot {
    fn name(self) -> String {
        match self {
            Slot::BiMap(i) => format!("bimap[{i}]"),
            Slot::Shift(k) => format!("shift[{k}]"),
            Slot::Normal(k) => format!("normal[{k}]"),
            Slot::Weight(k) => format!("weight[{k}]"),
            Slot::Bias => "bias".to_string(),
        }
    }
}

/// Directions for a tensor: coordinate matrices, or symmetric pairs
/// `E_ij + E_ji` for symmetric tensors.
fn directions(rows: usize, cols: usize, symmetric: bool) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if symmetric && j > i {
                continue;
            }
            let mut e = DMatrix::zeros(rows, cols);
            e[(i, j)] = 1.0;
            if symmetric {
                e[(j, i)] = 1.0;
            }
            out.push(e);
        }
    }
    out
}

fn perturb(params: &mut NetworkParams, slot: Slot, e: &DMatrix<f64>) {
    match (slot, params.head_mut()) {
        (Slot::Shift(k), HeadParams::Mlr(h)) => {
            h.shifts[k] = SpdMatrix::new_unchecked(h.shifts[k].as_matrix() + e);
        }
        (Slot::Normal(k), HeadParams::Mlr(h)) => {
            h.normals[k] = SymMatrix::new_unchecked(h.normals[k].as_matrix() + e);
        }
        (Slot::Weight(k), HeadParams::LogEig(h)) => {
            h.weights[k].iter_mut().zip(e.iter()).for_each(|(w, d)| *w += d);
        }
        (Slot::Bias, HeadParams::LogEig(h)) => {
            h.biases.iter_mut().zip(e.iter()).for_each(|(b, d)| *b += d);
        }
        (Slot::BiMap(i), _) => {
            let w = &mut params.bimaps_mut()[i].0;
            *w += e;
        }
        _ => unreachable!("slot matches the head kind"),
    }
}

fn analytic(grads: &Gradients, slot: Slot) -> DMatrix<f64> {
    match (slot, &grads.head) {
        (Slot::BiMap(i), _) => grads.bimaps[i].clone(),
        (Slot::Shift(k), HeadGradients::Mlr { shifts, .. }) => shifts[k].clone(),
        (Slot::Normal(k), HeadGradients::Mlr { normals, .. }) => normals[k].clone(),
        (Slot::Weight(k), HeadGradients::LogEig { weights, .. }) => DMatrix::from_row_slice(1, weights[k].len(), &weights[k]),
        (Slot::Bias, HeadGradients::LogEig { biases, .. }) => DMatrix::from_row_slice(1, biases.len(), biases),
        _ => unreachable!("slot matches the head kind"),
    }
}

/// Compares analytic gradients with central differences on a random batch
/// for every head in `spec`. `tamper` edits the analytic gradients before
/// comparison and exists for negative controls.
pub fn gradcheck(spec: &GradcheckSpec, seed: u64, tamper: Option<&dyn Fn(&mut Gradients)>) -> Result<GradcheckReport> {
    if spec.widths.first().is_none_or(|&d| d > GRADCHECK_MAX_DIM) {
        return Err(Error::Config(format!("gradcheck needs an input dimension of at most {GRADCHECK_MAX_DIM}")));
    }
    let mut rng = seeded(seed);
    let n0 = spec.widths[0];
    let inputs: Vec<SpdMatrix> = (0..spec.batch).map(|_| random_spd(&mut rng, n0, 50.0)).collect();
    let batch: Vec<(&SpdMatrix, usize)> = inputs.iter().enumerate().map(|(i, s)| (s, i % spec.classes)).collect();
    let mut tensors = Vec::new();
    for &head in &spec.heads {
        let config = NetworkConfig {
            reeig_eps: spec.reeig_eps,
            ..NetworkConfig::new(spec.widths.clone(), head, spec.classes, seed)
        };
        let mut params = NetworkParams::init(&config)?;
        let n = config.output_dim();
        let slots: Vec<(Slot, Vec<DMatrix<f64>>)> = {
            let mut slots: Vec<(Slot, Vec<DMatrix<f64>>)> = params
                .bimaps()
                .iter()
                .enumerate()
                .map(|(i, w)| (Slot::BiMap(i), directions(w.out_dim(), w.in_dim(), false)))
                .collect();
            match params.head_mut() {
                HeadParams::Mlr(h) => {
                    // Move off the identity so that every term of the
                    // shift gradient is exercised.
                    for k in 0..spec.classes {
                        h.shifts[k] = random_spd(&mut rng, n, 5.0);
                        h.normals[k] = random_sym(&mut rng, n, 1.0);
                        slots.push((Slot::Shift(k), directions(n, n, true)));
                        slots.push((Slot::Normal(k), directions(n, n, true)));
                    }
                }
                HeadParams::LogEig(h) => {
                    for k in 0..spec.classes {
                        h.biases[k] = random_sym(&mut rng, 1, 1.0)[(0, 0)];
                        slots.push((Slot::Weight(k), directions(1, n * n, false)));
                    }
                    slots.push((Slot::Bias, directions(1, spec.classes, false)));
                }
            }
            slots
        };
        let (_, mut grads) = batch_loss_and_grad(&config, &params, &batch)?;
        if let Some(f) = tamper {
            f(&mut grads);
        }
        let loss_at = |p: &NetworkParams| batch_loss_and_grad(&config, p, &batch).map(|(l, _)| l);
        for (slot, dirs) in slots {
            let a = analytic(&grads, slot);
            let (mut worst_gap, mut scale_a, mut scale_f) = (0.0f64, 0.0f64, 0.0f64);
            for e in &dirs {
                let mut plus = params.clone();
                perturb(&mut plus, slot, &(e * spec.step));
                let mut minus = params.clone();
                perturb(&mut minus, slot, &(e * -spec.step));
                let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * spec.step);
                let an = a.dot(e);
                worst_gap = worst_gap.max((an - fd).abs());
                scale_a = scale_a.max(an.abs());
                scale_f = scale_f.max(fd.abs());
            }
            tensors.push(TensorCheck {
                head: head.label(),
                tensor: slot.name(),
                rel_error: worst_gap / scale_a.max(scale_f).max(GRADCHECK_FLOOR),
            });
        }
    }
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        tensors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub metric: MetricSpec,
    /// `gaps[t]` compares the losses after `t` steps; `gaps[0]` is the
    /// initialization.
    pub gaps: Vec<f64>,
    pub spd_losses: Vec<f64>,
    pub logeig_losses: Vec<f64>,
}

impl EquivalenceReport {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().cloned().fold(0.0, f64::max)
    }
}

pub const EQUIVALENCE_DIM: usize = 5;
pub const EQUIVALENCE_LR: f64 = 0.1;

/// Principal logarithm through nalgebra's eigensolver, kept separate from
/// the crate's own matrix functions.
fn reference_log(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let logs = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::ln));
    &eig.eigenvectors * logs * eig.eigenvectors.transpose()
}

/// Trains an SPD MLR head under `metric` with PEM steps on the shifts and
/// Euclidean steps on the normals, and alongside it a LogEig MLR over
/// `x = mlog S` with parameters `P̄_k = mlog P_k`, `Ā_k = Ã_k` and plain
/// gradient descent. Both use full-batch mean cross-entropy.
pub fn equivalence_check(steps: usize, seed: u64, metric: MetricSpec) -> Result<EquivalenceReport> {
    if steps == 0 {
        return Err(Error::Config("equivalence check needs at least one step".into()));
    }
    let n = EQUIVALENCE_DIM;
    let classes = 3;
    let data = synth_generate(n, classes, 10, 0.3, MetricSpec::STANDARD_LEM, seed)?;
    let batch = data.subset(&(0..data.len()).collect::<Vec<_>>());
    let count = batch.len() as f64;

    let config = NetworkConfig::new(vec![n], HeadSpec::Mlr { metric }, classes, seed);
    let mut params = NetworkParams::init(&config)?;
    let mut rng = seeded(seed.wrapping_add(7));
    let (mut p_bar, mut a_bar) = (Vec::new(), Vec::new());
    if let HeadParams::Mlr(h) = params.head_mut() {
        for k in 0..classes {
            h.shifts[k] = random_spd(&mut rng, n, 4.0);
            h.normals[k] = random_sym(&mut rng, n, 1.0 / n as f64);
            p_bar.push(reference_log(h.shifts[k].as_matrix()));
            a_bar.push(h.normals[k].as_matrix().clone());
        }
    }
    let mut optimizer = Optimizer::new(
        OptimizerConfig {
            learning_rate: EQUIVALENCE_LR,
            spd_rule: SpdRule::Pem,
            amsgrad: None,
            weight_decay: 0.0,
        },
        &params,
    )?;
    let features: Vec<(DMatrix<f64>, usize)> = batch.iter().map(|(s, l)| (reference_log(s.as_matrix()), *l)).collect();

    let mut report = EquivalenceReport {
        metric,
        gaps: Vec::with_capacity(steps + 1),
        spd_losses: Vec::with_capacity(steps + 1),
        logeig_losses: Vec::with_capacity(steps + 1),
    };
    for t in 0..=steps {
        let (loss, mut grads) = batch_loss_and_grad(&config, &params, &batch)?;
        let spd_loss = loss / count;

        let mut ref_loss = 0.0;
        let mut d_p: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); classes];
        let mut d_a: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); classes];
        for (x, label) in &features {
            let logits: Vec<f64> = (0..classes).map(|k| (x - &p_bar[k]).dot(&a_bar[k])).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            ref_loss += max + z.ln() - logits[*label];
            for k in 0..classes {
                let g = (logits[k] - max).exp() / z - f64::from(u8::from(k == *label));
                d_a[k] += (x - &p_bar[k]) * g;
                d_p[k] -= &a_bar[k] * g;
            }
        }
        let ref_loss = ref_loss / count;
        report.spd_losses.push(spd_loss);
        report.logeig_losses.push(ref_loss);
        report.gaps.push((spd_loss - ref_loss).abs());
        if t == steps {
            break;
        }
        grads.scale(1.0 / count);
        optimizer.step(&mut params, &grads)?;
        for k in 0..classes {
            p_bar[k] -= &d_p[k] * (EQUIVALENCE_LR / count);
            a_bar[k] -= &d_a[k] * (EQUIVALENCE_LR / count);
        }
    }
    Ok(report)
}
