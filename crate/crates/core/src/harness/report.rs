//! Run records, per-cell aggregates, trend flags and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::AlphaSource;
use super::store::write_file_atomic;
use crate::error::{Error, Result};
use crate::pruning::ScoreMethod;

/// One student trained with and without the teacher at one grid cell and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: ScoreMethod,
    pub f: f64,
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    pub tau: f64,
    pub teacher_width: usize,
    /// Size of the pruned training set.
    pub kept: usize,
    pub teacher_accuracy: f64,
    pub kd_accuracy: f64,
    pub baseline_accuracy: f64,
    /// Seconds spent producing (or reloading) the KD student; not part of the CSV.
    pub wall_time_s: f64,
    pub dataset_hash: String,
    /// Empty for random pruning, which uses no scores.
    pub scores_hash: String,
    pub prune_hash: String,
    pub cache_hash: String,
}

/// The CSV projection of [`RunRecord`]: everything except wall time, so that
/// repeated runs produce byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRecord {
    seed: u64,
    method: ScoreMethod,
    f: f64,
    alpha: f64,
    alpha_source: AlphaSource,
    tau: f64,
    teacher_width: usize,
    kept: usize,
    teacher_accuracy: f64,
    kd_accuracy: f64,
    baseline_accuracy: f64,
    dataset_hash: String,
    scores_hash: String,
    prune_hash: String,
    cache_hash: String,
}

impl From<&RunRecord> for CsvRecord {
    fn from(r: &RunRecord) -> Self {
        Self {
            seed: r.seed,
            method: r.method,
            f: r.f,
            alpha: r.alpha,
            alpha_source: r.alpha_source,
            tau: r.tau,
            teacher_width: r.teacher_width,
            kept: r.kept,
            teacher_accuracy: r.teacher_accuracy,
            kd_accuracy: r.kd_accuracy,
            baseline_accuracy: r.baseline_accuracy,
            dataset_hash: r.dataset_hash.clone(),
            scores_hash: r.scores_hash.clone(),
            prune_hash: r.prune_hash.clone(),
            cache_hash: r.cache_hash.clone(),
        }
    }
}

impl From<CsvRecord> for RunRecord {
    fn from(r: CsvRecord) -> Self {
        Self {
            seed: r.seed,
            method: r.method,
            f: r.f,
            alpha: r.alpha,
            alpha_source: r.alpha_source,
            tau: r.tau,
            teacher_width: r.teacher_width,
            kept: r.kept,
            teacher_accuracy: r.teacher_accuracy,
            kd_accuracy: r.kd_accuracy,
            baseline_accuracy: r.baseline_accuracy,
            wall_time_s: 0.0,
            dataset_hash: r.dataset_hash,
            scores_hash: r.scores_hash,
            prune_hash: r.prune_hash,
            cache_hash: r.cache_hash,
        }
    }
}

/// Identifies a grid cell (everything but the seed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub method: ScoreMethod,
    pub teacher_width: usize,
    pub alpha_source: AlphaSource,
    pub f: f64,
    pub alpha: f64,
}

impl CellKey {
    pub fn of(r: &RunRecord) -> Self {
        Self {
            method: r.method,
            teacher_width: r.teacher_width,
            alpha_source: r.alpha_source,
            f: r.f,
            alpha: r.alpha,
        }
    }

    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.method
            .cmp(&other.method)
            .then(self.teacher_width.cmp(&other.teacher_width))
            .then(self.alpha_source.cmp(&other.alpha_source))
            .then(self.f.total_cmp(&other.f))
            .then(self.alpha.total_cmp(&other.alpha))
    }

    fn same(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }

    /// Name of the KD curve this cell belongs to in plot files.
    pub fn kd_series(&self) -> String {
        match self.alpha_source {
            AlphaSource::Grid => format!("{}/t{}/a{}", self.method, self.teacher_width, self.alpha),
            AlphaSource::Policy => format!("{}/t{}/policy", self.method, self.teacher_width),
        }
    }

    pub fn baseline_series(&self) -> String {
        format!("{}/t{}/no-kd", self.method, self.teacher_width)
    }
}

/// Canonical record order: cell, then seed.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| CellKey::of(a).cmp(&CellKey::of(b)).then(a.seed.cmp(&b.seed)));
}

/// Mean and sample standard deviation of one grid cell over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(flatten)]
    pub cell: CellKey,
    pub runs: usize,
    pub kd_mean: f64,
    pub kd_std: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub teacher_mean: f64,
    pub teacher_std: f64,
}

/// Mean and sample standard deviation (`n − 1`; zero for a single value),
/// summing in the given order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Aggregates per cell over records in canonical order.
pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let key = CellKey::of(&sorted[start]);
        let end = start + sorted[start..].iter().take_while(|r| CellKey::of(r).same(&key)).count();
        let group = &sorted[start..end];
        let column = |get: fn(&RunRecord) -> f64| mean_std(&group.iter().map(get).collect::<Vec<_>>());
        let (kd_mean, kd_std) = column(|r| r.kd_accuracy);
        let (baseline_mean, baseline_std) = column(|r| r.baseline_accuracy);
        let (teacher_mean, teacher_std) = column(|r| r.teacher_accuracy);
        out.push(Aggregate {
            cell: key,
            runs: group.len(),
            kd_mean,
            kd_std,
            baseline_mean,
            baseline_std,
            teacher_mean,
            teacher_std,
        });
        start = end;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Pipeline,
    Capacity,
}

impl ReportKind {
    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Pipeline => "pipeline",
            ReportKind::Capacity => "capacity",
        }
    }
}

/// A directional expectation evaluated on the aggregates. Informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFlag {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ReportKind,
    pub student_width: usize,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    pub trends: Vec<TrendFlag>,
}

impl ExperimentReport {
    /// Sorts the records and derives aggregates and trend flags from them.
    pub fn from_records(kind: ReportKind, student_width: usize, mut records: Vec<RunRecord>) -> Self {
        sort_records(&mut records);
        let aggregates = aggregate(&records);
        let trends = match kind {
            ReportKind::Pipeline => kd_trends(&aggregates),
            ReportKind::Capacity => capacity_trends(&aggregates, student_width),
        };
        Self {
            kind,
            student_width,
            records,
            aggregates,
            trends,
        }
    }

    /// The aggregate for one cell, if present.
    pub fn cell(&self, method: ScoreMethod, f: f64, alpha: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.cell.method == method && a.cell.f == f && a.cell.alpha == alpha)
    }
}

/// Per KD series: does KD beat the no-KD baseline at every kept fraction?
fn kd_trends(aggregates: &[Aggregate]) -> Vec<TrendFlag> {
    let mut by_series: BTreeMap<String, Vec<&Aggregate>> = BTreeMap::new();
    for a in aggregates {
        by_series.entry(a.cell.kd_series()).or_default().push(a);
    }
    by_series
        .into_iter()
        .map(|(series, cells)| {
            let losing: Vec<String> = cells
                .iter()
                .filter(|a| a.kd_mean <= a.baseline_mean)
                .map(|a| format!("f={}", a.cell.f))
                .collect();
            TrendFlag {
                name: format!("kd_beats_no_kd_at_every_f[{series}]"),
                passed: losing.is_empty(),
                detail: if losing.is_empty() {
                    format!("KD mean above no-KD mean at all {} fractions", cells.len())
                } else {
                    format!("KD mean not above no-KD at {}", losing.join(", "))
                },
            }
        })
        .collect()
}

/// At the lowest kept fraction, is the best teacher no wider than the student?
fn capacity_trends(aggregates: &[Aggregate], student_width: usize) -> Vec<TrendFlag> {
    let Some(low_f) = aggregates.iter().map(|a| a.cell.f).min_by(f64::total_cmp) else {
        return Vec::new();
    };
    let mut ranking: Vec<&Aggregate> = aggregates.iter().filter(|a| a.cell.f == low_f).collect();
    ranking.sort_by(|a, b| b.kd_mean.total_cmp(&a.kd_mean).then(a.cell.teacher_width.cmp(&b.cell.teacher_width)));
    let best = ranking[0].cell.teacher_width;
    let detail = ranking
        .iter()
        .map(|a| format!("t{}={:.4}", a.cell.teacher_width, a.kd_mean))
        .collect::<Vec<_>>()
        .join(" > ");
    vec![TrendFlag {
        name: format!("smaller_teacher_favored_at_low_f[f={low_f}]"),
        passed: best <= student_width,
        detail: format!("student width {student_width}; ranking {detail}"),
    }]
}

/// Records as CSV, in canonical order, without wall time.
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory CSV write");
    for r in &sorted {
        w.serialize(CsvRecord::from(r)).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

const CSV_HEADER: [&str; 15] = [
    "seed",
    "method",
    "f",
    "alpha",
    "alpha_source",
    "tau",
    "teacher_width",
    "kept",
    "teacher_accuracy",
    "kd_accuracy",
    "baseline_accuracy",
    "dataset_hash",
    "scores_hash",
    "prune_hash",
    "cache_hash",
];

pub fn records_from_csv(text: &str, path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvRecord>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(path, line, e.to_string())
        })?;
        out.push(row.into());
    }
    Ok(out)
}

pub fn load_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    records_from_csv(&text, path)
}

/// Plot data: one row per kept fraction, a mean and std column per series.
pub fn plot_csv(aggregates: &[Aggregate]) -> String {
    let mut series: BTreeMap<String, BTreeMap<u64, (f64, f64)>> = BTreeMap::new();
    let mut fractions: Vec<f64> = Vec::new();
    for a in aggregates {
        let key = a.cell.f.to_bits();
        series.entry(a.cell.kd_series()).or_default().insert(key, (a.kd_mean, a.kd_std));
        series
            .entry(a.cell.baseline_series())
            .or_default()
            .entry(key)
            .or_insert((a.baseline_mean, a.baseline_std));
        fractions.push(a.cell.f);
    }
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();

    let mut out = String::from("f");
    for name in series.keys() {
        out.push_str(&format!(",{name}_mean,{name}_std"));
    }
    out.push('\n');
    for f in fractions {
        out.push_str(&f.to_string());
        for points in series.values() {
            match points.get(&f.to_bits()) {
                Some((m, s)) => out.push_str(&format!(",{m},{s}")),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json`, `records.csv` and `plot_accuracy.csv` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report)?;
    let files = [
        ("report.json", json + "\n"),
        ("records.csv", records_to_csv(&report.records)),
        ("plot_accuracy.csv", plot_csv(&report.aggregates)),
    ];
    let mut paths = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_file_atomic(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}
