//! Teacher logit caches, the fraction-aware KD weight and student distillation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::nn::{predict_logits, train, DenseNet, Distillation, KdScaling, LogitSource, TrainConfig, TrainTrace};

/// Frozen teacher outputs keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache {
    pub teacher_id: String,
    pub num_classes: usize,
    pub logits: BTreeMap<usize, Vec<f64>>,
    pub tau_hint: f64,
}

impl LogitSource for TeacherCache {
    fn logits_for(&self, sample_id: usize) -> Option<&[f64]> {
        self.logits.get(&sample_id).map(Vec::as_slice)
    }
}

impl TeacherCache {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Header comment, column header, then one row per sample with 17
    /// significant digits so every `f64` survives the round trip.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# teacher_id={} classes={} samples={} tau_hint={}\nsample_id",
            self.teacher_id,
            self.num_classes,
            self.logits.len(),
            self.tau_hint
        );
        for c in 0..self.num_classes {
            out.push_str(&format!(",z_{c}"));
        }
        out.push('\n');
        for (id, z) in &self.logits {
            out.push_str(&id.to_string());
            for v in z {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_csv().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l));
        let (_, first) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty cache file"))?;
        let meta: BTreeMap<&str, &str> = first
            .strip_prefix('#')
            .ok_or_else(|| Error::parse(path, 1, "missing header comment"))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let field = |k: &str| meta.get(k).copied().ok_or_else(|| Error::parse(path, 1, format!("header is missing '{k}'")));
        let teacher_id = field("teacher_id")?.to_string();
        let num_classes: usize = field("classes")?.parse().map_err(|_| Error::parse(path, 1, "bad class count"))?;
        let samples: usize = field("samples")?.parse().map_err(|_| Error::parse(path, 1, "bad sample count"))?;
        let tau_hint: f64 = field("tau_hint")?.parse().map_err(|_| Error::parse(path, 1, "bad tau_hint"))?;

        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 2, "missing column header"))?;
        if header.split(',').count() != num_classes + 1 {
            return Err(Error::parse(path, 2, format!("expected {} columns", num_classes + 1)));
        }
        let mut logits = BTreeMap::new();
        for (line, row) in lines {
            if row.is_empty() {
                continue;
            }
            let mut cells = row.split(',');
            let id: usize = cells
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|_| Error::parse(path, line, "bad sample id"))?;
            let z = cells
                .map(|c| c.parse::<f64>().map_err(|_| Error::parse(path, line, format!("bad logit '{c}'"))))
                .collect::<Result<Vec<f64>>>()?;
            if z.len() != num_classes {
                return Err(Error::parse(path, line, format!("expected {num_classes} logits, got {}", z.len())));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, line, "non-finite logit"));
            }
            if logits.insert(id, z).is_some() {
                return Err(Error::parse(path, line, format!("duplicate sample id {id}")));
            }
        }
        if logits.len() != samples {
            return Err(Error::parse(path, 1, format!("header says {samples} samples, found {}", logits.len())));
        }
        Ok(Self {
            teacher_id,
            num_classes,
            logits,
            tau_hint,
        })
    }
}

/// Runs the teacher once over `ds` and stores its logits by sample id.
pub fn cache_teacher_logits(teacher: &DenseNet, ds: &LabeledDataset, tau_hint: f64) -> Result<TeacherCache> {
    let z = predict_logits(teacher, ds)?;
    let logits = ds
        .sample_ids()
        .iter()
        .zip(z.rows())
        .map(|(&id, row)| (id, row.to_vec()))
        .collect();
    Ok(TeacherCache {
        teacher_id: sha256_hex(teacher.to_checkpoint_json().as_bytes())[..16].to_string(),
        num_classes: teacher.num_classes(),
        logits,
        tau_hint,
    })
}

/// Piecewise-linear KD weight as a function of the kept fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct AlphaPolicy {
    knots: Vec<(f64, f64)>,
}

impl AlphaPolicy {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::input("alpha policy needs at least one knot"));
        }
        for &(f, a) in &knots {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::input(format!("knot fraction {f} outside (0, 1]")));
            }
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::input(format!("knot alpha {a} outside [0, 1]")));
            }
        }
        if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::input("knot fractions must be strictly increasing"));
        }
        Ok(Self { knots })
    }

    pub fn constant(alpha: f64) -> Result<Self> {
        Self::new(vec![(1.0, alpha)])
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }
}

impl Default for AlphaPolicy {
    /// Full reliance on the teacher for small kept fractions, tapering to an
    /// even split by `f = 0.7`.
    fn default() -> Self {
        Self {
            knots: vec![(0.1, 1.0), (0.3, 1.0), (0.7, 0.5)],
        }
    }
}

impl TryFrom<Vec<(f64, f64)>> for AlphaPolicy {
    type Error = Error;

    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(knots)
    }
}

impl From<AlphaPolicy> for Vec<(f64, f64)> {
    fn from(p: AlphaPolicy) -> Self {
        p.knots
    }
}

/// α(f): linear between knots, held constant beyond the first and last knot.
pub fn alpha_schedule(f: f64, policy: &AlphaPolicy) -> Result<f64> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::input(format!("pruning fraction must lie in (0, 1], got {f}")));
    }
    let knots = &policy.knots;
    let (f0, a0) = knots[0];
    if f <= f0 {
        return Ok(a0);
    }
    for w in knots.windows(2) {
        let ((fl, al), (fr, ar)) = (w[0], w[1]);
        if f <= fr {
            return Ok(al + (ar - al) * (f - fl) / (fr - fl));
        }
    }
    Ok(knots[knots.len() - 1].1)
}

/// Settings shared by every student run.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentSetup<'a> {
    pub arch: &'a [usize],
    pub tau: f64,
    pub scaling: KdScaling,
    pub cfg: &'a TrainConfig,
}

/// Trains a fresh student (initialised from `cfg.seed`) on the pruned set
/// with `α = alpha_schedule(f, policy)` held fixed for the whole run.
pub fn distill_train(
    setup: &StudentSetup<'_>,
    pruned: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    cache: &TeacherCache,
    f: f64,
    policy: &AlphaPolicy,
) -> Result<(DenseNet, TrainTrace)> {
    let alpha = alpha_schedule(f, policy)?;
    distill_train_with_alpha(setup, pruned, eval, cache, alpha)
}

/// [`distill_train`] with an explicit α instead of a policy.
pub fn distill_train_with_alpha(
    setup: &StudentSetup<'_>,
    pruned: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    cache: &TeacherCache,
    alpha: f64,
) -> Result<(DenseNet, TrainTrace)> {
    if let Some(&id) = pruned.sample_ids().iter().find(|id| !cache.logits.contains_key(id)) {
        return Err(Error::input(format!("teacher cache has no logits for sample id {id}")));
    }
    let student = DenseNet::init(setup.arch, setup.cfg.seed)?;
    let kd = Distillation {
        teacher: cache,
        alpha,
        tau: setup.tau,
        scaling: setup.scaling,
    };
    let (model, mut trace) = train(&student, pruned, eval, setup.cfg, Some(&kd))?;
    trace.alpha = Some(alpha);
    Ok((model, trace))
}

/// The no-KD baseline with the same initialisation as [`distill_train`].
pub fn train_without_teacher(
    setup: &StudentSetup<'_>,
    pruned: &LabeledDataset,
    eval: Option<&LabeledDataset>,
) -> Result<(DenseNet, TrainTrace)> {
    let student = DenseNet::init(setup.arch, setup.cfg.seed)?;
    train(&student, pruned, eval, setup.cfg, None)
}
