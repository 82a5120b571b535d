use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, kd_loss_with, KdScaling};
use super::{argmax, predict_logits, DenseNet};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, substream};

/// Minibatch SGD with momentum, coupled weight decay and step decay of the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs at whose start the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Drives minibatch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 60,
            batch_size: 128,
            lr_decay_epochs: vec![30, 45],
            lr_decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            problems.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            problems.push("lr_decay_epochs must be strictly increasing".to_string());
        }
        if self.lr_decay_epochs.iter().any(|&e| e >= self.epochs) {
            problems.push(format!("lr_decay_epochs must all be < epochs ({})", self.epochs));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            problems.push(format!("lr_decay_factor must be > 0, got {}", self.lr_decay_factor));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }
}

/// Per-sample teacher logits addressed by sample id.
pub trait LogitSource {
    fn logits_for(&self, sample_id: usize) -> Option<&[f64]>;
}

/// Soft-target settings for a distillation run.
pub struct Distillation<'a> {
    pub teacher: &'a dyn LogitSource,
    pub alpha: f64,
    pub tau: f64,
    pub scaling: KdScaling,
}

/// What happened during training, epoch by epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_accuracy: Vec<f64>,
    /// Empty when no evaluation set was given.
    pub test_accuracy: Vec<f64>,
    /// Column order of `correctness`.
    pub sample_ids: Vec<usize>,
    /// `correctness[e][k]`: sample `sample_ids[k]` classified correctly after epoch `e`.
    pub correctness: Vec<Vec<bool>>,
    /// KD weight the run used, if it distilled.
    pub alpha: Option<f64>,
}

impl TrainTrace {
    pub fn epochs(&self) -> usize {
        self.correctness.len()
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.test_accuracy.last().copied()
    }
}

/// Trains a copy of `model` on `ds`.
///
/// Without `kd` (or with `kd.alpha == 0`) this is plain cross-entropy
/// training. Shuffling is a fixed function of `(cfg.seed, epoch)` and all
/// reductions run in a fixed order, so repeated calls are bit-identical.
pub fn train(
    model: &DenseNet,
    ds: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    kd: Option<&Distillation<'_>>,
) -> Result<(DenseNet, TrainTrace)> {
    cfg.validate()?;
    if ds.dim() != model.input_dim() {
        return Err(Error::input(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            ds.dim()
        )));
    }
    if ds.num_classes() != model.num_classes() {
        return Err(Error::input(format!(
            "model has {} outputs, dataset has {} classes",
            model.num_classes(),
            ds.num_classes()
        )));
    }
    if ds.is_empty() {
        return Err(Error::input("cannot train on an empty dataset"));
    }
    let c = model.num_classes();

    let soft = match kd {
        Some(k) => {
            if !(0.0..=1.0).contains(&k.alpha) {
                return Err(Error::input(format!("alpha must lie in [0, 1], got {}", k.alpha)));
            }
            if !(k.tau > 0.0 && k.tau.is_finite()) {
                return Err(Error::input(format!("temperature must be > 0, got {}", k.tau)));
            }
            let mut targets = Array2::zeros((ds.len(), c));
            for (row, &id) in ds.sample_ids().iter().enumerate() {
                let z = k
                    .teacher
                    .logits_for(id)
                    .ok_or_else(|| Error::input(format!("no teacher logits for sample id {id}")))?;
                if z.len() != c {
                    return Err(Error::input(format!(
                        "teacher logits for sample id {id} have {} entries, expected {c}",
                        z.len()
                    )));
                }
                targets.row_mut(row).assign(&ndarray::ArrayView1::from(z));
            }
            (k.alpha > 0.0).then_some((targets, k.alpha, k.tau, k.scaling))
        }
        None => None,
    };

    let mut net = model.clone();
    let mut trace = TrainTrace {
        sample_ids: ds.sample_ids().to_vec(),
        alpha: kd.map(|k| k.alpha),
        ..TrainTrace::default()
    };
    let mut velocity = net.zero_gradients();
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut substream(derive_seed(cfg.seed, epoch as u64), stream::SHUFFLE));
        for batch in order.chunks(cfg.batch_size) {
            let x = ds.features().select(Axis(0), batch);
            let acts = net.forward_batch(x.view());
            let logits = acts.last().unwrap();
            let scale = 1.0 / batch.len() as f64;
            let mut dlogits = Array2::zeros((batch.len(), c));
            for (k, &row) in batch.iter().enumerate() {
                let z = logits.row(k);
                let z = z.as_slice().expect("contiguous logits");
                let label = ds.labels()[row];
                let (_, g) = match &soft {
                    Some((targets, alpha, tau, scaling)) => {
                        let t = targets.row(row);
                        kd_loss_with(z, t.as_slice().unwrap(), label, *alpha, *tau, *scaling)?
                    }
                    None => cross_entropy(z, label)?,
                };
                for (o, g) in dlogits.row_mut(k).iter_mut().zip(g) {
                    *o = g * scale;
                }
            }
            let grads = net.backward(&acts, dlogits);
            sgd_step(&mut net, &mut velocity, &grads, lr, cfg.momentum, cfg.weight_decay);
        }
        record_epoch(&net, ds, eval, &mut trace)?;
    }
    Ok((net, trace))
}

fn sgd_step(
    net: &mut DenseNet,
    velocity: &mut super::Gradients,
    grads: &super::Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for l in 0..net.weights.len() {
        ndarray::Zip::from(&mut net.weights[l])
            .and(&mut velocity.weights[l])
            .and(&grads.weights[l])
            .for_each(|p, v, &g| {
                *v = momentum * *v + g + weight_decay * *p;
                *p -= lr * *v;
            });
        ndarray::Zip::from(&mut net.biases[l])
            .and(&mut velocity.biases[l])
            .and(&grads.biases[l])
            .for_each(|p, v, &g| {
                *v = momentum * *v + g + weight_decay * *p;
                *p -= lr * *v;
            });
    }
}

fn record_epoch(
    net: &DenseNet,
    ds: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    trace: &mut TrainTrace,
) -> Result<()> {
    let logits = predict_logits(net, ds)?;
    let row: Vec<bool> = logits
        .rows()
        .into_iter()
        .zip(ds.labels())
        .map(|(z, &y)| argmax(z) == y)
        .collect();
    let correct = row.iter().filter(|&&b| b).count();
    trace.train_accuracy.push(correct as f64 / ds.len() as f64);
    trace.correctness.push(row);
    if let Some(eval) = eval {
        trace.test_accuracy.push(super::accuracy(net, eval)?);
    }
    Ok(())
}
