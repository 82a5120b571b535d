//! The experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::theory_suite::TheoryGrid;
use crate::data::{gen_gaussian_mixture, inject_label_noise, load_csv_dataset, LabeledDataset, MixtureSpec, NoiseSpec};
use crate::distill::{alpha_schedule, AlphaPolicy};
use crate::error::{Error, Result};
use crate::nn::{KdScaling, TrainConfig};
use crate::pruning::{round_half_up, GrandMode, ScoreMethod};

/// Everything a pipeline, capacity sweep or single CLI stage needs.
///
/// Serialised as TOML; every field has a default, so a config file only
/// needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    /// One full pipeline per seed; seeds drive initialisation, shuffling and random pruning.
    pub seeds: Vec<u64>,
    /// Root of the artifact store.
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    pub teacher: ArchSpec,
    pub student: ArchSpec,
    pub pruning: PruningSpec,
    pub distill: DistillSpec,
    pub train: TrainConfig,
    pub capacity: CapacitySpec,
    pub theory: TheoryGrid,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            teacher: ArchSpec { hidden: vec![128] },
            student: ArchSpec { hidden: vec![64] },
            pruning: PruningSpec::default(),
            distill: DistillSpec::default(),
            train: TrainConfig::default(),
            capacity: CapacitySpec::default(),
            theory: TheoryGrid::default(),
        }
    }
}

/// Where the data comes from and how many training labels get flipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Fraction of training labels replaced by a wrong class before anything is trained.
    pub label_noise: f64,
    pub noise_seed: u64,
    pub source: DataSource,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            label_noise: 0.0,
            noise_seed: 0,
            source: DataSource::Mixture(MixtureSpec::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Mixture(MixtureSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
}

fn default_label_column() -> String {
    "label".to_string()
}

/// Hidden-layer widths; input and output sizes come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
}

impl ArchSpec {
    pub fn layer_sizes(&self, dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(dim);
        sizes.extend(&self.hidden);
        sizes.push(num_classes);
        sizes
    }

    /// Widest hidden layer (0 for a linear model); the "width" reported for teachers.
    pub fn width(&self) -> usize {
        self.hidden.iter().copied().max().unwrap_or(0)
    }

    /// Same depth with every hidden layer set to `width`.
    pub fn with_width(&self, width: usize) -> Self {
        Self {
            hidden: vec![width; self.hidden.len().max(1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruningSpec {
    pub methods: Vec<ScoreMethod>,
    /// Kept fractions.
    pub fractions: Vec<f64>,
    /// Models averaged for EL2N and GraNd.
    pub ensemble_size: usize,
    /// Epoch at which EL2N/GraNd ensembles are read; defaults to a quarter of training.
    pub snapshot_epoch: Option<usize>,
    pub grand_mode: GrandMode,
}

impl Default for PruningSpec {
    fn default() -> Self {
        Self {
            methods: vec![ScoreMethod::Random, ScoreMethod::Forgetting],
            fractions: vec![0.1, 0.3, 0.5],
            ensemble_size: 5,
            snapshot_epoch: None,
            grand_mode: GrandMode::Full,
        }
    }
}

/// Either an explicit α grid or a fraction-dependent policy, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSpec {
    pub alphas: Vec<f64>,
    pub policy: Option<AlphaPolicy>,
    pub tau: f64,
    pub scaling: KdScaling,
}

impl Default for DistillSpec {
    fn default() -> Self {
        Self {
            alphas: vec![0.5],
            policy: None,
            tau: 4.0,
            scaling: KdScaling::TauSquared,
        }
    }
}

impl DistillSpec {
    /// KD weights evaluated at kept fraction `f`, each tagged with where it came from.
    pub fn alphas_at(&self, f: f64) -> Result<Vec<(f64, AlphaSource)>> {
        match &self.policy {
            Some(policy) => Ok(vec![(alpha_schedule(f, policy)?, AlphaSource::Policy)]),
            None => Ok(self.alphas.iter().map(|&a| (a, AlphaSource::Grid)).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSource {
    Grid,
    Policy,
}

impl AlphaSource {
    pub fn name(self) -> &'static str {
        match self {
            AlphaSource::Grid => "grid",
            AlphaSource::Policy => "policy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacitySpec {
    /// Hidden widths of the teachers compared by the capacity sweep.
    pub teacher_widths: Vec<usize>,
}

impl Default for CapacitySpec {
    fn default() -> Self {
        Self {
            teacher_widths: vec![32, 64, 256],
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serde(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Serde(msg) => Error::Serde(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment spec serialises to TOML")
    }

    /// Ensemble snapshot epoch after applying the default.
    pub fn snapshot_epoch(&self) -> usize {
        self.pruning
            .snapshot_epoch
            .unwrap_or_else(|| round_half_up(self.train.epochs as f64 * 0.25).max(1))
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".to_string());
        }
        if has_duplicates(&self.seeds) {
            problems.push("seeds must be distinct".to_string());
        }
        if self.out.as_os_str().is_empty() {
            problems.push("out must name a directory".to_string());
        }

        let ds = &self.dataset;
        if !(0.0..=1.0).contains(&ds.label_noise) {
            problems.push(format!("dataset.label_noise must lie in [0, 1], got {}", ds.label_noise));
        }
        match &ds.source {
            DataSource::Mixture(m) => {
                if m.num_classes < 2 {
                    problems.push("dataset.source.num_classes must be >= 2".to_string());
                }
                if m.dim < 2 {
                    problems.push("dataset.source.dim must be >= 2".to_string());
                }
                if m.train_per_class == 0 || m.test_per_class == 0 {
                    problems.push("dataset.source needs at least one train and one test sample per class".to_string());
                }
                if !(m.spread >= 0.0 && m.spread.is_finite()) {
                    problems.push(format!("dataset.source.spread must be finite and >= 0, got {}", m.spread));
                }
            }
            DataSource::Csv(c) => {
                for (name, path) in [("train", &c.train), ("test", &c.test)] {
                    if !path.is_file() {
                        problems.push(format!("dataset.source.{name} file {} does not exist", path.display()));
                    }
                }
            }
        }

        for (name, arch) in [("teacher", &self.teacher), ("student", &self.student)] {
            if arch.hidden.contains(&0) {
                problems.push(format!("{name}.hidden widths must be positive"));
            }
        }

        let p = &self.pruning;
        if p.methods.is_empty() {
            problems.push("pruning.methods must not be empty".to_string());
        }
        if has_duplicates(&p.methods) {
            problems.push("pruning.methods must be distinct".to_string());
        }
        if p.fractions.is_empty() {
            problems.push("pruning.fractions must not be empty".to_string());
        }
        for &f in &p.fractions {
            if !(f > 0.0 && f <= 1.0) {
                problems.push(format!("pruning fraction {f} outside (0, 1]"));
            }
        }
        if p.fractions.windows(2).any(|w| w[0] >= w[1]) {
            problems.push("pruning.fractions must be strictly increasing".to_string());
        }
        if p.ensemble_size == 0 {
            problems.push("pruning.ensemble_size must be positive".to_string());
        }
        if let Some(e) = p.snapshot_epoch {
            if e == 0 || e > self.train.epochs {
                problems.push(format!(
                    "pruning.snapshot_epoch must lie in [1, {}], got {e}",
                    self.train.epochs
                ));
            }
        }

        let d = &self.distill;
        match (&d.policy, d.alphas.is_empty()) {
            (Some(_), false) => problems.push("give either distill.alphas or distill.policy, not both".to_string()),
            (None, true) => problems.push("distill.alphas must not be empty when no policy is given".to_string()),
            _ => {}
        }
        for &a in &d.alphas {
            if !(0.0..=1.0).contains(&a) {
                problems.push(format!("alpha {a} outside [0, 1]"));
            }
        }
        if has_duplicates_f64(&d.alphas) {
            problems.push("distill.alphas must be distinct".to_string());
        }
        if !(d.tau > 0.0 && d.tau.is_finite()) {
            problems.push(format!("distill.tau must be > 0, got {}", d.tau));
        }

        if let Err(Error::Validation(train_problems)) = self.train.validate() {
            problems.extend(train_problems.into_iter().map(|m| format!("train: {m}")));
        }
        if self.capacity.teacher_widths.contains(&0) {
            problems.push("capacity.teacher_widths must be positive".to_string());
        }
        if let Err(Error::Validation(theory_problems)) = self.theory.validate() {
            problems.extend(theory_problems.into_iter().map(|m| format!("theory: {m}")));
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Loads or generates the data and applies label noise to the training split.
    pub fn build_datasets(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let (train, test) = match &self.dataset.source {
            DataSource::Mixture(m) => gen_gaussian_mixture(m)?,
            DataSource::Csv(c) => {
                let train = load_csv_dataset(&c.train, &c.label_column)?;
                let test = load_csv_dataset(&c.test, &c.label_column)?;
                let classes = train.num_classes().max(test.num_classes());
                let widen = |ds: LabeledDataset, split| {
                    LabeledDataset::with_ids(
                        ds.features().clone(),
                        ds.labels().to_vec(),
                        ds.sample_ids().to_vec(),
                        classes,
                        split,
                    )
                };
                (widen(train, crate::data::Split::Train)?, widen(test, crate::data::Split::Test)?)
            }
        };
        if train.dim() != test.dim() {
            return Err(Error::input(format!(
                "train has {} features but test has {}",
                train.dim(),
                test.dim()
            )));
        }
        let train = if self.dataset.label_noise > 0.0 {
            inject_label_noise(
                &train,
                &NoiseSpec {
                    flip_fraction: self.dataset.label_noise,
                    seed: self.dataset.noise_seed,
                },
            )?
        } else {
            train
        };
        Ok((train, test))
    }
}

fn has_duplicates<T: Ord + Clone>(items: &[T]) -> bool {
    let mut sorted = items.to_vec();
    sorted.sort();
    sorted.windows(2).any(|w| w[0] == w[1])
}

fn has_duplicates_f64(items: &[f64]) -> bool {
    let mut sorted = items.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).any(|w| w[0] == w[1])
}
