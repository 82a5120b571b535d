//! Dense ReLU classifier with hand-derived gradients.

mod loss;
mod train;

pub use loss::{
    cross_entropy, kd_loss, kd_loss_with, log_softmax_temperature, softmax_temperature, KdScaling,
};
pub use train::{train, Distillation, LogitSource, TrainConfig, TrainTrace};

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, substream};

const CHECKPOINT_FORMAT: &str = "kd-prune/dense-net/v1";
const EVAL_BATCH: usize = 512;

/// Fully connected network `d → h₁ → … → C`, ReLU on hidden layers and raw
/// logits at the output. Weight matrices are stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Parameter-shaped gradient (or update) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn squared_norm(&self) -> f64 {
        let w: f64 = self.weights.iter().flat_map(|m| m.iter()).map(|v| v * v).sum();
        let b: f64 = self.biases.iter().flat_map(|m| m.iter()).map(|v| v * v).sum();
        w + b
    }

    /// Flattened in the same order as [`DenseNet::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl DenseNet {
    /// Uniform init in `±1/√fan_in` for weights and biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = substream(seed, stream::INIT);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..bound)
            }));
            biases.push(Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound)));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|p| Array2::zeros((p[1], p[0]))).collect();
        let biases = layer_sizes.windows(2).map(|p| Array1::zeros(p[1])).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::input("need one bias per weight matrix and at least one layer"));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *sizes.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::input("inconsistent layer shapes"));
            }
            sizes.push(w.nrows());
        }
        validate_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Per layer: weights row-major, then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Activations of every layer for a batch (`B × d`); the last entry holds the logits.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let batch = x.insert_axis(Axis(0));
        self.forward_batch(batch).pop().unwrap().row(0).to_owned()
    }

    /// Parameter gradient given the loss gradient w.r.t. the logits of each
    /// batch row. `acts` must come from [`forward_batch`](Self::forward_batch)
    /// on the same batch; per-row contributions are summed.
    pub fn backward(&self, acts: &[Array2<f64>], dlogits: Array2<f64>) -> Gradients {
        let layers = self.weights.len();
        let mut grads = self.zero_gradients();
        let mut delta = dlogits;
        for l in (0..layers).rev() {
            grads.weights[l] = delta.t().dot(&acts[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l]);
                ndarray::Zip::from(&mut upstream)
                    .and(&acts[l])
                    .for_each(|g, &a| {
                        if a <= 0.0 {
                            *g = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        grads
    }

    /// Gradient of the τ=1 cross-entropy of a single sample.
    pub fn sample_ce_gradient(&self, x: ArrayView1<'_, f64>, label: usize) -> Result<Gradients> {
        let acts = self.forward_batch(x.insert_axis(Axis(0)));
        let logits = acts.last().unwrap().row(0).to_owned();
        let (_, g) = cross_entropy(logits.as_slice().unwrap(), label)?;
        let dlogits = Array2::from_shape_vec((1, g.len()), g).unwrap();
        Ok(self.backward(&acts, dlogits))
    }

    /// Loads a checkpoint written by [`save`](Self::save).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()).map_err(|e| Error::io(path, e))
    }

    /// Structured-text checkpoint: layer sizes and flat `f64` parameters.
    pub fn to_checkpoint_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            layer_sizes: self.layer_sizes.clone(),
            params: self.params_flat(),
        };
        serde_json::to_string(&ck).expect("checkpoint serialises")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::input(format!("unknown checkpoint format '{}'", ck.format)));
        }
        let mut net = Self::zeros(&ck.layer_sizes)?;
        net.set_params_flat(&ck.params)?;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::input(format!(
            "layer sizes must list at least input and output widths, all positive: {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Logits for every row of `ds`, in row (sample id) order.
pub fn predict_logits(model: &DenseNet, ds: &LabeledDataset) -> Result<Array2<f64>> {
    if ds.dim() != model.input_dim() {
        return Err(Error::input(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            ds.dim()
        )));
    }
    let n = ds.len();
    let mut out = Array2::zeros((n, model.num_classes()));
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let batch = ds.features().slice(s![start..end, ..]);
        let logits = model.forward_batch(batch).pop().unwrap();
        out.slice_mut(s![start..end, ..]).assign(&logits);
        start = end;
    }
    Ok(out)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(model: &DenseNet, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let logits = predict_logits(model, ds)?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(ds.labels())
        .filter(|(row, &label)| argmax(*row) == label)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use ndarray::arr1;

    fn toy_dataset(n: usize, d: usize, seed: u64) -> LabeledDataset {
        let mut rng = substream(seed, 0);
        let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let labels = (0..n).map(|i| i % 3).collect();
        LabeledDataset::new(features, labels, 3, Split::Train).unwrap()
    }

    #[test]
    fn zero_network_gives_zero_logits_and_uniform_probabilities() {
        let net = DenseNet::zeros(&[4, 5, 3]).unwrap();
        let ds = toy_dataset(6, 4, 1);
        let logits = predict_logits(&net, &ds).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let p = softmax_temperature(logits.row(0).as_slice().unwrap(), 1.0).unwrap();
        assert!(p.iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn batched_matches_single_sample() {
        let net = DenseNet::init(&[4, 8, 3], 2).unwrap();
        let ds = toy_dataset(20, 4, 2);
        let batched = predict_logits(&net, &ds).unwrap();
        for i in 0..ds.len() {
            let single = net.logits(ds.row(i));
            for (a, b) in single.iter().zip(batched.row(i)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_two_layer_forward() {
        let net = DenseNet::init(&[3, 5, 2], 3).unwrap();
        let ds = toy_dataset(7, 3, 3);
        let got = predict_logits(&net, &ds).unwrap();
        let (w1, b1, w2, b2) = (&net.weights[0], &net.biases[0], &net.weights[1], &net.biases[1]);
        for i in 0..ds.len() {
            let x = ds.row(i);
            let h: Vec<f64> = (0..5)
                .map(|j| {
                    let z: f64 = (0..3).map(|k| w1[(j, k)] * x[k]).sum::<f64>() + b1[j];
                    z.max(0.0)
                })
                .collect();
            for c in 0..2 {
                let z: f64 = (0..5).map(|j| w2[(c, j)] * h[j]).sum::<f64>() + b2[c];
                assert!((z - got[(i, c)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = DenseNet::zeros(&[5, 3]).unwrap();
        assert!(predict_logits(&net, &toy_dataset(3, 4, 1)).is_err());
    }

    #[test]
    fn invalid_layer_sizes() {
        assert!(DenseNet::init(&[4], 0).is_err());
        assert!(DenseNet::init(&[4, 0, 2], 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = DenseNet::init(&[6, 7, 4], 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        net.save(&path).unwrap();
        let back = DenseNet::load(&path).unwrap();
        assert_eq!(back.layer_sizes(), net.layer_sizes());
        for (a, b) in back.params_flat().iter().zip(net.params_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sample_gradient_matches_finite_differences() {
        let net = DenseNet::init(&[3, 4, 3], 5).unwrap();
        let x = arr1(&[0.3, -0.7, 1.1]);
        let label = 2;
        let analytic = net.sample_ce_gradient(x.view(), label).unwrap().flat();
        let base = net.params_flat();
        let h = 1e-6;
        let loss_at = |p: &[f64]| {
            let mut m = net.clone();
            m.set_params_flat(p).unwrap();
            let z = m.logits(x.view());
            cross_entropy(z.as_slice().unwrap(), label).unwrap().0
        };
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += h;
            let mut minus = base.clone();
            minus[k] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-8);
            assert!((analytic[k] - numeric).abs() / denom <= 1e-5, "param {k}: {} vs {numeric}", analytic[k]);
        }
    }
}
