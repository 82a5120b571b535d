//! Datasets for the classification experiments and the regression theory suite.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, substream};
use crate::theory::RegressionProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Feature matrix (`N × d`), integer labels in `[0, C)` and stable sample ids.
///
/// Ids are assigned once, when the dataset is created or loaded, and survive
/// subsetting unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    sample_ids: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl LabeledDataset {
    /// Builds a dataset with ids `0..N` in row order.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(features, labels, ids, num_classes, split)
    }

    pub fn with_ids(
        features: Array2<f64>,
        labels: Vec<usize>,
        sample_ids: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if features.nrows() != labels.len() || sample_ids.len() != labels.len() {
            return Err(Error::input(format!(
                "{} feature rows, {} labels, {} ids",
                features.nrows(),
                labels.len(),
                sample_ids.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::input("need at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::input(format!("label {bad} outside [0, {num_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("features must be finite"));
        }
        let mut sorted = sample_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("sample ids must be distinct"));
        }
        Ok(Self {
            features,
            labels,
            sample_ids,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    /// Rows whose sample id is in `ids`, in the order given.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let max_id = self.sample_ids.iter().copied().max().unwrap_or(0);
        let mut row_of = vec![usize::MAX; max_id + 1];
        for (row, &id) in self.sample_ids.iter().enumerate() {
            row_of[id] = row;
        }
        let rows = ids
            .iter()
            .map(|&id| match row_of.get(id) {
                Some(&r) if r != usize::MAX => Ok(r),
                _ => Err(Error::input(format!("sample id {id} not in dataset"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_ids(
            self.features.select(Axis(0), &rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
            ids.to_vec(),
            self.num_classes,
            self.split,
        )
    }

    /// Same samples with every label replaced.
    pub fn relabeled(&self, labels: Vec<usize>) -> Result<Self> {
        Self::with_ids(
            self.features.clone(),
            labels,
            self.sample_ids.clone(),
            self.num_classes,
            self.split,
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Parameters of the Gaussian-mixture classification benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 20,
            train_per_class: 500,
            test_per_class: 200,
            spread: 0.35,
            seed: 0,
        }
    }
}

/// Class means on the unit sphere, isotropic Gaussian clouds of std `spread`
/// around them. Train and test come from the same means and separate streams;
/// rows are shuffled so ids carry no class order.
pub fn gen_gaussian_mixture(spec: &MixtureSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.num_classes < 2 || spec.dim < 2 || spec.train_per_class == 0 {
        return Err(Error::input("mixture needs C >= 2, d >= 2 and at least one sample per class"));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(Error::input(format!("spread must be finite and >= 0, got {}", spec.spread)));
    }
    let mut rng = substream(spec.seed, stream::MIXTURE_MEANS);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let draw = |per_class: usize, tag: u64, split: Split| -> Result<LabeledDataset> {
        let mut rng = substream(spec.seed, tag);
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(per_class * spec.num_classes);
        for (class, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let x = mean
                    .iter()
                    .map(|m| m + spec.spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                rows.push((x, class));
            }
        }
        rows.shuffle(&mut rng);
        let n = rows.len();
        let mut features = Array2::zeros((n, spec.dim));
        let mut labels = Vec::with_capacity(n);
        for (i, (x, c)) in rows.into_iter().enumerate() {
            features.row_mut(i).assign(&ArrayView1::from(&x));
            labels.push(c);
        }
        LabeledDataset::new(features, labels, spec.num_classes, split)
    };
    let train = draw(spec.train_per_class, stream::MIXTURE_TRAIN, Split::Train)?;
    let test = draw(spec.test_per_class, stream::MIXTURE_TEST, Split::Test)?;
    Ok((train, test))
}

/// Parameters of a synthetic ridge-regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub dim: usize,
    pub samples: usize,
    pub noise_std: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            dim: 10,
            samples: 200,
            noise_std: 1.0,
            lambda: 1.0,
            seed: 0,
        }
    }
}

/// Design with i.i.d. standard-normal entries and a unit-norm Gaussian `θ*`.
pub fn gen_linear_regression(spec: &RegressionSpec) -> Result<RegressionProblem> {
    if spec.dim == 0 || spec.dim > spec.samples {
        return Err(Error::input(format!(
            "need 0 < d <= N, got d={}, N={}",
            spec.dim, spec.samples
        )));
    }
    let mut rng = substream(spec.seed, stream::REGRESSION_DESIGN);
    let x = DMatrix::from_fn(spec.dim, spec.samples, |_, _| rng.sample(StandardNormal));
    let mut rng = substream(spec.seed, stream::REGRESSION_THETA);
    let theta = loop {
        let t = DVector::<f64>::from_fn(spec.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = t.norm();
        if norm > 1e-12 {
            break t / norm;
        }
    };
    RegressionProblem::new(x, theta, spec.noise_std, spec.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub flip_fraction: f64,
    pub seed: u64,
}

/// Flips exactly `round(flip_fraction · N)` labels, each to a uniformly drawn wrong class.
pub fn inject_label_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&spec.flip_fraction) {
        return Err(Error::input(format!(
            "flip_fraction must lie in [0, 1], got {}",
            spec.flip_fraction
        )));
    }
    let n = ds.len();
    let flips = crate::pruning::round_half_up(spec.flip_fraction * n as f64).min(n);
    let c = ds.num_classes();
    let mut rng = substream(spec.seed, stream::LABEL_NOISE);
    let mut labels = ds.labels().to_vec();
    let mut chosen = rand::seq::index::sample(&mut rng, n, flips).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let r = rng.random_range(0..c - 1);
        labels[i] = if r < labels[i] { r } else { r + 1 };
    }
    ds.relabeled(labels)
}

/// Reads a headered CSV of numeric features plus one integer label column.
///
/// Row order defines sample ids. The number of classes is one more than the
/// largest label seen (at least two).
pub fn load_csv_dataset(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::input(format!("label column '{label_column}' not found in {}", path.display())))?;
    let dim = headers.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (k, cell) in record.iter().enumerate() {
            if k == label_idx {
                let label = cell
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(path, line, format!("label '{cell}' is not a nonnegative integer")))?;
                labels.push(label);
            } else {
                let v = cell
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("value '{cell}' is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::parse(path, line, format!("value '{cell}' is not finite")));
                }
                values.push(v);
            }
        }
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, dim), values).map_err(|e| Error::input(e.to_string()))?;
    let num_classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    LabeledDataset::new(features, labels, num_classes, Split::Train)
}

/// Writes `f0,...,f{d-1},label` with shortest round-trip float formatting.
pub fn save_csv_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(ds, &mut w).map_err(|e| Error::io(path, e))
}

/// The text [`save_csv_dataset`] writes.
pub fn dataset_to_csv(ds: &LabeledDataset) -> String {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("dataset CSV is ASCII")
}

fn write_dataset<W: Write>(ds: &LabeledDataset, w: &mut W) -> std::io::Result<()> {
    let header: Vec<String> = (0..ds.dim()).map(|k| format!("f{k}")).collect();
    writeln!(w, "{},label", header.join(","))?;
    for (row, label) in ds.features.rows().into_iter().zip(&ds.labels) {
        for v in row {
            write!(w, "{v},")?;
        }
        writeln!(w, "{label}")?;
    }
    w.flush()
}
