//! Mini-batch training, evaluation and run reports.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::dataset::Dataset;
use crate::linalg::SpdMatrix;
use crate::network::{batch_loss_and_grad, predict_logits, HeadParams, NetworkConfig, NetworkParams};
use crate::optim::Optimizer;
use crate::random::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub balanced_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Some class had no samples; the balanced accuracy averages over the
    /// others.
    pub empty_class: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seed: u64,
    pub head: String,
    pub epochs: Vec<EpochRecord>,
    pub final_eval: Evaluation,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let last_loss = self.epochs.last().map_or(f64::NAN, |e| e.train_loss);
        format!(
            "{}: epochs={} loss={:.4} acc={:.4} bacc={:.4}",
            self.head,
            self.epochs.len(),
            last_loss,
            self.final_eval.accuracy,
            self.final_eval.balanced_accuracy
        )
    }
}

/// A trained network with everything needed to run it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub network: NetworkConfig,
    pub params: NetworkParams,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.params.check(&model.network)?;
        Ok(model)
    }

    pub fn evaluate(&self, data: &Dataset, indices: &[usize]) -> Result<Evaluation> {
        evaluate(&self.network, &self.params, data, indices)
    }
}

/// Scores predictions against labels.
pub fn score(predicted: &[usize], labels: &[usize], classes: usize) -> Result<Evaluation> {
    if predicted.len() != labels.len() {
        return Err(Error::dims(labels.len(), predicted.len()));
    }
    if predicted.is_empty() {
        return Err(Error::Domain("cannot score an empty set".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predicted.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(Error::Domain(format!("class index out of range for {classes} classes")));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let recalls: Vec<f64> = confusion
        .iter()
        .enumerate()
        .filter_map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        empty_class: recalls.len() < classes,
        confusion,
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

pub fn evaluate(network: &NetworkConfig, params: &NetworkParams, data: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    if data.dim() != network.input_dim() {
        return Err(Error::dims(network.input_dim(), data.dim()));
    }
    let subset = data.subset(indices);
    let matrices: Vec<&SpdMatrix> = subset.iter().map(|(s, _)| *s).collect();
    let labels: Vec<usize> = subset.iter().map(|(_, l)| *l).collect();
    let predicted: Vec<usize> = predict_logits(network, params, &matrices)?.iter().map(|l| argmax(l)).collect();
    score(&predicted, &labels, network.classes)
}

fn params_finite(params: &NetworkParams) -> bool {
    let bimaps = params.bimaps().iter().all(|w| w.as_matrix().iter().all(|x| x.is_finite()));
    bimaps
        && match params.head() {
            HeadParams::Mlr(h) => h
                .shifts
                .iter()
                .map(|s| s.as_matrix())
                .chain(h.normals.iter().map(|a| a.as_matrix()))
                .all(|m| m.iter().all(|x| x.is_finite())),
            HeadParams::LogEig(h) => h.weights.iter().flatten().chain(&h.biases).all(|x| x.is_finite()),
        }
}

fn param_norms(params: &NetworkParams) -> String {
    let mut parts: Vec<String> = params
        .bimaps()
        .iter()
        .enumerate()
        .map(|(i, w)| format!("W{i}={:.3e}", w.as_matrix().norm()))
        .collect();
    match params.head() {
        HeadParams::Mlr(h) => {
            let p: f64 = h.shifts.iter().map(|s| s.as_matrix().norm_squared()).sum();
            let a: f64 = h.normals.iter().map(|s| s.as_matrix().norm_squared()).sum();
            parts.push(format!("shifts={:.3e}", p.sqrt()));
            parts.push(format!("normals={:.3e}", a.sqrt()));
        }
        HeadParams::LogEig(h) => {
            let w: f64 = h.weights.iter().flatten().map(|x| x * x).sum();
            parts.push(format!("weights={:.3e}", w.sqrt()));
        }
    }
    parts.join(" ")
}

/// Trains from the seeded initialization; the test split (or the training
/// split when the test split is empty) is scored after every epoch.
pub fn train(config: &RunConfig, data: &Dataset) -> Result<(RunReport, TrainedModel)> {
    config.validate()?;
    let network = NetworkConfig {
        reeig_eps: config.reeig_eps,
        ..NetworkConfig::new(config.widths.clone(), config.head, data.classes(), config.seed)
    };
    network.validate()?;
    if data.dim() != network.input_dim() {
        return Err(Error::dims(format!("input dimension {}", network.input_dim()), format!("dataset dimension {}", data.dim())));
    }
    if data.train_indices().is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut params = NetworkParams::init(&network)?;
    train_from(config, &network, &mut params, data).map(|report| (report, TrainedModel { network, params }))
}

/// Continues training `params` in place.
pub fn train_from(config: &RunConfig, network: &NetworkConfig, params: &mut NetworkParams, data: &Dataset) -> Result<RunReport> {
    let mut optimizer = Optimizer::new(config.optimizer.clone(), params)?;
    let mut rng = seeded(config.seed.wrapping_add(1));
    let mut order = data.train_indices().to_vec();
    let eval_set = if data.test_indices().is_empty() {
        data.train_indices()
    } else {
        data.test_indices()
    };
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch).enumerate() {
            let abort = |detail: String| Error::NumericalAbort {
                epoch,
                batch: batch_no,
                detail,
            };
            let batch = data.subset(chunk);
            let (loss, mut grads) = batch_loss_and_grad(network, params, &batch).map_err(|e| abort(e.to_string()))?;
            if !loss.is_finite() || !grads.max_abs().is_finite() {
                return Err(abort(format!("non-finite loss {loss}; parameter norms {}", param_norms(params))));
            }
            total += loss;
            grads.scale(1.0 / chunk.len() as f64);
            optimizer
                .step(params, &grads)
                .map_err(|e| abort(format!("{e}; parameter norms {}", param_norms(params))))?;
            if !params_finite(params) {
                return Err(abort(format!("update produced non-finite parameters; parameter norms {}", param_norms(params))));
            }
        }
        let eval = evaluate(network, params, data, eval_set)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            test_accuracy: eval.accuracy,
            balanced_accuracy: eval.balanced_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let final_eval = evaluate(network, params, data, eval_set)?;
    Ok(RunReport {
        config: config.clone(),
        seed: config.seed,
        head: network.head.label(),
        epochs,
        final_eval,
    })
}
