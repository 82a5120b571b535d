//! Per-sample importance scores and the selections built on them.
//!
//! All model-based scores are pure per-sample functions averaged over an
//! ensemble in member order, so results do not depend on evaluation order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, DenseNet, TrainTrace};
use crate::rng::{derive_seed, stream, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    El2n,
    Grand,
    Forgetting,
    Random,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 4] = [
        ScoreMethod::Random,
        ScoreMethod::Forgetting,
        ScoreMethod::El2n,
        ScoreMethod::Grand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::El2n => "el2n",
            ScoreMethod::Grand => "grand",
            ScoreMethod::Forgetting => "forgetting",
            ScoreMethod::Random => "random",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::input(format!("unknown pruning method '{s}'")))
    }
}

/// `floor(x + 0.5)`: halves round up.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Number of samples kept at fraction `f` of `n`.
pub fn kept_count(f: f64, n: usize) -> Result<usize> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::input(format!("pruning fraction must lie in (0, 1], got {f}")));
    }
    let k = round_half_up(f * n as f64).min(n);
    if k == 0 {
        return Err(Error::input(format!("fraction {f} of {n} samples keeps nothing")));
    }
    Ok(k)
}

/// One score per training sample plus how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub method: ScoreMethod,
    pub scores: BTreeMap<usize, f64>,
    pub ensemble_size: usize,
    pub snapshot_epoch: usize,
    pub seed: u64,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.scores.get(&id).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# method={} ensemble={} snapshot_epoch={} seed={}\nsample_id,score\n",
            self.method, self.ensemble_size, self.snapshot_epoch, self.seed
        );
        for (id, s) in &self.scores {
            out.push_str(&format!("{id},{s}\n"));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let (meta, body) = split_meta(text, path)?;
        let method: ScoreMethod = meta_value(&meta, "method", path)?.parse()?;
        let ensemble_size = meta_value(&meta, "ensemble", path)?
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad ensemble size"))?;
        let snapshot_epoch = meta_value(&meta, "snapshot_epoch", path)?
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad snapshot epoch"))?;
        let seed = meta_value(&meta, "seed", path)?
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad seed"))?;
        let mut scores = BTreeMap::new();
        for (line, rec) in csv_records(body, path, &["sample_id", "score"])? {
            let id: usize = rec[0].parse().map_err(|_| Error::parse(path, line, "bad sample id"))?;
            let s: f64 = rec[1].parse().map_err(|_| Error::parse(path, line, "bad score"))?;
            if !s.is_finite() {
                return Err(Error::parse(path, line, "score is not finite"));
            }
            if scores.insert(id, s).is_some() {
                return Err(Error::parse(path, line, format!("duplicate sample id {id}")));
            }
        }
        Ok(Self {
            method,
            scores,
            ensemble_size,
            snapshot_epoch,
            seed,
        })
    }
}

/// Selected sample ids at one pruning fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub kept_ids: Vec<usize>,
    pub fraction: f64,
    pub method: ScoreMethod,
    pub seed: u64,
}

impl PruneResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# method={} f={} seed={}\nsample_id\n",
            self.method, self.fraction, self.seed
        );
        for id in &self.kept_ids {
            out.push_str(&format!("{id}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let (meta, body) = split_meta(text, path)?;
        let method: ScoreMethod = meta_value(&meta, "method", path)?.parse()?;
        let fraction: f64 = meta_value(&meta, "f", path)?
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad fraction"))?;
        let seed = meta_value(&meta, "seed", path)?
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad seed"))?;
        let kept_ids = csv_records(body, path, &["sample_id"])?
            .into_iter()
            .map(|(line, rec)| rec[0].parse().map_err(|_| Error::parse(path, line, "bad sample id")))
            .collect::<Result<Vec<usize>>>()?;
        Ok(Self {
            kept_ids,
            fraction,
            method,
            seed,
        })
    }
}

fn split_meta<'a>(text: &'a str, path: &Path) -> Result<(BTreeMap<String, String>, &'a str)> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let meta_line = first
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(path, 1, "missing '# key=value' header comment"))?;
    let mut meta = BTreeMap::new();
    for pair in meta_line.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::parse(path, 1, format!("malformed header field '{pair}'")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok((meta, rest))
}

fn meta_value<'a>(meta: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::parse(path, 1, format!("header is missing '{key}'")))
}

// Body records with their 1-based line numbers in the whole file (header comment is line 1).
fn csv_records(body: &str, path: &Path, columns: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(path, 2, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != columns {
        return Err(Error::parse(path, 2, format!("expected columns {}", columns.join(","))));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line() + 1), e.to_string()))?;
            let line = r.position().map_or(0, |p| p.line() + 1);
            Ok((line, r))
        })
        .collect()
}

/// Mean over ensemble members of `‖softmax(z) − onehot(y)‖₂`.
pub fn score_el2n(ensemble_logits: &[Array2<f64>], ds: &LabeledDataset, snapshot_epoch: usize, seed: u64) -> Result<ScoreTable> {
    if ensemble_logits.is_empty() {
        return Err(Error::input("EL2N needs at least one ensemble member"));
    }
    let shape = (ds.len(), ds.num_classes());
    if let Some(bad) = ensemble_logits.iter().find(|m| m.dim() != shape) {
        return Err(Error::input(format!(
            "logit matrix has shape {:?}, expected {shape:?}",
            bad.dim()
        )));
    }
    let k = ensemble_logits.len() as f64;
    let mut scores = BTreeMap::new();
    for (row, (&id, &label)) in ds.sample_ids().iter().zip(ds.labels()).enumerate() {
        let mut total = 0.0;
        for member in ensemble_logits {
            let z = member.index_axis(Axis(0), row);
            let p = crate::nn::softmax_temperature(&z.to_vec(), 1.0)?;
            let sq: f64 = p
                .iter()
                .enumerate()
                .map(|(c, &pc)| {
                    let e = pc - if c == label { 1.0 } else { 0.0 };
                    e * e
                })
                .sum();
            total += sq.sqrt();
        }
        scores.insert(id, total / k);
    }
    Ok(ScoreTable {
        method: ScoreMethod::El2n,
        scores,
        ensemble_size: ensemble_logits.len(),
        snapshot_epoch,
        seed,
    })
}

/// Which parameters enter the GraNd gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrandMode {
    /// Every weight and bias of the network.
    #[default]
    Full,
    /// Only the output layer's weights and biases.
    LastLayer,
}

/// Mean over ensemble members of the per-sample cross-entropy gradient norm.
pub fn score_grand(
    ensemble: &[DenseNet],
    ds: &LabeledDataset,
    mode: GrandMode,
    snapshot_epoch: usize,
    seed: u64,
) -> Result<ScoreTable> {
    if ensemble.is_empty() {
        return Err(Error::input("GraNd needs at least one ensemble member"));
    }
    for m in ensemble {
        if m.input_dim() != ds.dim() || m.num_classes() != ds.num_classes() {
            return Err(Error::input("ensemble member does not match dataset shape"));
        }
    }
    let k = ensemble.len() as f64;
    let mut scores = BTreeMap::new();
    for (row, (&id, &label)) in ds.sample_ids().iter().zip(ds.labels()).enumerate() {
        let mut total = 0.0;
        for model in ensemble {
            total += sample_gradient_norm(model, ds, row, label, mode)?;
        }
        scores.insert(id, total / k);
    }
    Ok(ScoreTable {
        method: ScoreMethod::Grand,
        scores,
        ensemble_size: ensemble.len(),
        snapshot_epoch,
        seed,
    })
}

fn sample_gradient_norm(model: &DenseNet, ds: &LabeledDataset, row: usize, label: usize, mode: GrandMode) -> Result<f64> {
    match mode {
        GrandMode::Full => Ok(model.sample_ce_gradient(ds.row(row), label)?.norm()),
        GrandMode::LastLayer => {
            let acts = model.forward_batch(ds.row(row).insert_axis(Axis(0)));
            let layers = acts.len() - 1;
            let logits = acts[layers].row(0).to_vec();
            let (_, g) = cross_entropy(&logits, label)?;
            let g_sq: f64 = g.iter().map(|v| v * v).sum();
            let h_sq: f64 = acts[layers - 1].row(0).iter().map(|v| v * v).sum();
            // ∂/∂W = g hᵀ and ∂/∂b = g
            Ok((g_sq * (h_sq + 1.0)).sqrt())
        }
    }
}

/// Forgetting events per sample: epochs `e > 0` where a correct prediction at
/// `e−1` turns incorrect at `e`. Samples never classified correctly score
/// `epochs + 1`, above any attainable count.
pub fn score_forgetting(trace: &TrainTrace, seed: u64) -> Result<ScoreTable> {
    let epochs = trace.correctness.len();
    if epochs == 0 {
        return Err(Error::input("forgetting scores need at least one recorded epoch"));
    }
    let n = trace.sample_ids.len();
    if trace.correctness.iter().any(|row| row.len() != n) {
        return Err(Error::input("correctness rows do not match the number of samples"));
    }
    let mut scores = BTreeMap::new();
    for (k, &id) in trace.sample_ids.iter().enumerate() {
        let mut ever = trace.correctness[0][k];
        let mut events = 0usize;
        for e in 1..epochs {
            let (prev, now) = (trace.correctness[e - 1][k], trace.correctness[e][k]);
            if prev && !now {
                events += 1;
            }
            ever |= now;
        }
        let score = if ever { events } else { epochs + 1 };
        scores.insert(id, score as f64);
    }
    Ok(ScoreTable {
        method: ScoreMethod::Forgetting,
        scores,
        ensemble_size: 1,
        snapshot_epoch: epochs,
        seed,
    })
}

/// Uniform random priorities in `[0, 1)`; top-k on them is plain random pruning.
pub fn score_random(ds: &LabeledDataset, seed: u64) -> ScoreTable {
    use rand::Rng;
    let mut rng = substream(seed, stream::RANDOM_PRUNE);
    let scores = ds.sample_ids().iter().map(|&id| (id, rng.random::<f64>())).collect();
    ScoreTable {
        method: ScoreMethod::Random,
        scores,
        ensemble_size: 0,
        snapshot_epoch: 0,
        seed,
    }
}

/// Keeps the `round(f·N)` highest scores; ties go to the smaller sample id.
/// `kept_ids` are ordered by descending score, then ascending id.
pub fn prune_topk(table: &ScoreTable, f: f64, n: usize) -> Result<PruneResult> {
    if table.len() != n {
        return Err(Error::input(format!(
            "score table has {} entries, dataset has {n}",
            table.len()
        )));
    }
    let keep = kept_count(f, n)?;
    let mut ranked: Vec<(usize, f64)> = table.scores.iter().map(|(&id, &s)| (id, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(PruneResult {
        kept_ids: ranked.into_iter().take(keep).map(|(id, _)| id).collect(),
        fraction: f,
        method: table.method,
        seed: table.seed,
    })
}

/// Largest-remainder apportionment of `total` across groups proportional to `sizes`.
/// Remainder ties go to the lower group index.
pub fn largest_remainder(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // compare remainders (total·s mod n) exactly in integers
    order.sort_by(|&a, &b| ((total * sizes[b]) % n).cmp(&((total * sizes[a]) % n)).then(a.cmp(&b)));
    let assigned: usize = quotas.iter().sum();
    for &g in order.iter().take(total - assigned) {
        quotas[g] += 1;
    }
    quotas
}

/// Class-balanced random selection: per-class quotas by largest remainder,
/// uniform draws without replacement inside each class. `kept_ids` ascending.
pub fn prune_random_balanced(ds: &LabeledDataset, f: f64, seed: u64) -> Result<PruneResult> {
    let n = ds.len();
    let total = kept_count(f, n)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (&id, &label) in ds.sample_ids().iter().zip(ds.labels()) {
        members[label].push(id);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::input(format!("class {c} has no samples")));
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = largest_remainder(total, &sizes);
    let mut kept = Vec::with_capacity(total);
    for (class, (ids, &quota)) in members.iter_mut().zip(&quotas).enumerate() {
        if quota > ids.len() {
            return Err(Error::input(format!(
                "class {class} needs {quota} samples but has {}",
                ids.len()
            )));
        }
        ids.sort_unstable();
        let mut rng = substream(derive_seed(seed, class as u64), stream::RANDOM_PRUNE);
        kept.extend(rand::seq::index::sample(&mut rng, ids.len(), quota).into_iter().map(|i| ids[i]));
    }
    kept.sort_unstable();
    Ok(PruneResult {
        kept_ids: kept,
        fraction: f,
        method: ScoreMethod::Random,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use ndarray::{arr2, Array2};

    fn table(scores: &[f64]) -> ScoreTable {
        ScoreTable {
            method: ScoreMethod::El2n,
            scores: scores.iter().copied().enumerate().collect(),
            ensemble_size: 1,
            snapshot_epoch: 0,
            seed: 0,
        }
    }

    fn labelled(labels: Vec<usize>, c: usize) -> LabeledDataset {
        let n = labels.len();
        LabeledDataset::new(Array2::zeros((n, 2)), labels, c, Split::Train).unwrap()
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(kept_count(0.25, 10).unwrap(), 3);
        assert!(kept_count(0.01, 10).is_err());
        assert!(kept_count(1.1, 10).is_err());
        assert!(kept_count(0.0, 10).is_err());
    }

    #[test]
    fn topk_hand_cases() {
        let ids: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(prune_topk(&table(&ids), 0.3, 10).unwrap().kept_ids, vec![9, 8, 7]);
        assert_eq!(prune_topk(&table(&[1.0; 10]), 0.5, 10).unwrap().kept_ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(prune_topk(&table(&ids), 1.0, 10).unwrap().kept_ids.len(), 10);
        assert!(prune_topk(&table(&ids), 0.3, 11).is_err());
    }

    #[test]
    fn el2n_hand_cases() {
        let ds = labelled(vec![0], 2);
        let uniform = score_el2n(&[arr2(&[[0.0, 0.0]])], &ds, 0, 0).unwrap();
        assert!((uniform.get(0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        // saturated correct prediction contributes (numerically) nothing
        let exact = score_el2n(&[arr2(&[[800.0, 0.0]])], &ds, 0, 0).unwrap();
        assert_eq!(exact.get(0).unwrap(), 0.0);
        assert!(score_el2n(&[], &ds, 0, 0).is_err());
    }

    #[test]
    fn forgetting_hand_counts() {
        let trace = TrainTrace {
            sample_ids: vec![0, 1, 2],
            correctness: vec![
                vec![false, true, false],
                vec![true, true, false],
                vec![false, true, false],
                vec![true, true, false],
                vec![false, true, false],
            ],
            ..TrainTrace::default()
        };
        let t = score_forgetting(&trace, 0).unwrap();
        assert_eq!(t.get(0), Some(2.0));
        assert_eq!(t.get(1), Some(0.0));
        assert_eq!(t.get(2), Some(6.0));
        assert!(score_forgetting(&TrainTrace::default(), 0).is_err());
    }

    #[test]
    fn apportionment_hand_case() {
        assert_eq!(largest_remainder(10, &[10, 10, 5]), vec![4, 4, 2]);
        assert_eq!(largest_remainder(3, &[1, 1, 1, 1]), vec![1, 1, 1, 0]);
    }

    #[test]
    fn balanced_random_quotas() {
        let ds = labelled((0..20).map(|i| i % 2).collect(), 2);
        let r = prune_random_balanced(&ds, 0.5, 3).unwrap();
        let ones = r.kept_ids.iter().filter(|&&id| ds.labels()[id] == 1).count();
        assert_eq!((r.kept_ids.len(), ones), (10, 5));
        assert_eq!(prune_random_balanced(&ds, 1.0, 3).unwrap().kept_ids, (0..20).collect::<Vec<_>>());
        assert_eq!(r, prune_random_balanced(&ds, 0.5, 3).unwrap());
    }

    #[test]
    fn balanced_random_rejects_empty_class() {
        let ds = labelled(vec![0, 0, 2, 2], 3);
        assert!(prune_random_balanced(&ds, 0.5, 0).is_err());
    }

    #[test]
    fn score_file_round_trip() {
        let t = ScoreTable {
            method: ScoreMethod::Grand,
            scores: [(0, 0.1 + 0.2), (3, 1e-300), (7, 12345.678901234567)].into_iter().collect(),
            ensemble_size: 5,
            snapshot_epoch: 15,
            seed: 42,
        };
        let back = ScoreTable::from_csv(&t.to_csv(), Path::new("x")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), t.to_csv());
    }

    #[test]
    fn prune_file_round_trip() {
        let p = PruneResult {
            kept_ids: vec![9, 2, 4],
            fraction: 0.3,
            method: ScoreMethod::Forgetting,
            seed: 7,
        };
        assert_eq!(PruneResult::from_csv(&p.to_csv(), Path::new("x")).unwrap(), p);
    }

    #[test]
    fn score_file_errors_carry_line_numbers() {
        let text = "# method=el2n ensemble=1 snapshot_epoch=0 seed=0\nsample_id,score\n0,1.0\n1,abc\n";
        match ScoreTable::from_csv(text, Path::new("s.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(ScoreTable::from_csv("sample_id,score\n", Path::new("s.csv")).is_err());
    }
}
