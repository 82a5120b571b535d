//! Teacher → scores → prune → student pipelines over the artifact store.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::report::{emit_report, ExperimentReport, ReportKind, RunRecord};
use super::spec::{ArchSpec, ExperimentSpec};
use super::store::{ArtifactKind, ArtifactStore, Stored};
use crate::data::{dataset_to_csv, LabeledDataset};
use crate::digest::sha256_hex;
use crate::distill::{cache_teacher_logits, distill_train_with_alpha, train_without_teacher, StudentSetup, TeacherCache};
use crate::error::{Error, Result};
use crate::nn::{accuracy, predict_logits, train, DenseNet, TrainConfig, TrainTrace};
use crate::pruning::{
    prune_random_balanced, prune_topk, score_el2n, score_forgetting, score_grand, PruneResult, ScoreMethod, ScoreTable,
};
use crate::rng::derive_seed;

/// Indices passed to [`derive_seed`] to split a run seed into independent roles.
mod role {
    pub const TEACHER_INIT: u64 = 1;
    pub const TEACHER_SHUFFLE: u64 = 2;
    pub const STUDENT: u64 = 3;
    pub const ENSEMBLE_BASE: u64 = 100;
}

/// A trained network together with its training trace.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Stored<DenseNet>,
    pub trace: Stored<TrainTrace>,
}

/// A validated spec bound to its data and artifact store.
pub struct Experiment {
    spec: ExperimentSpec,
    store: ArtifactStore,
    train: LabeledDataset,
    test: LabeledDataset,
    dataset_hash: String,
}

#[derive(Serialize)]
struct StudentKey<'a> {
    prune: &'a str,
    layers: &'a [usize],
    cfg: &'a TrainConfig,
    kd: Option<(&'a str, f64, f64, crate::nn::KdScaling)>,
}

impl Experiment {
    /// Validates the spec, builds the datasets and records them in the store.
    pub fn prepare(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let store = ArtifactStore::open(&spec.out)?;
        let (train, test) = spec.build_datasets()?;
        let key = ArtifactStore::key("data", &spec.dataset);
        let train_hash = store.put_text(
            store.path(ArtifactKind::Data, &format!("{key}-train"), "csv"),
            &dataset_to_csv(&train),
        )?;
        let test_hash = store.put_text(
            store.path(ArtifactKind::Data, &format!("{key}-test"), "csv"),
            &dataset_to_csv(&test),
        )?;
        let dataset_hash = sha256_hex(format!("{train_hash}\n{test_hash}").as_bytes());
        Ok(Self {
            spec: spec.clone(),
            store,
            train,
            test,
            dataset_hash,
        })
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.store
    }

    /// Training split after label noise.
    pub fn train_set(&self) -> &LabeledDataset {
        &self.train
    }

    pub fn test_set(&self) -> &LabeledDataset {
        &self.test
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    fn layers(&self, arch: &ArchSpec) -> Vec<usize> {
        arch.layer_sizes(self.train.dim(), self.train.num_classes())
    }

    /// Teacher trained on the full (noisy) training set; its trace also feeds forgetting scores.
    pub fn teacher(&self, seed: u64, arch: &ArchSpec) -> Result<TrainedModel> {
        let layers = self.layers(arch);
        let init_seed = derive_seed(seed, role::TEACHER_INIT);
        let cfg = TrainConfig {
            seed: derive_seed(seed, role::TEACHER_SHUFFLE),
            ..self.spec.train.clone()
        };
        let key = ArtifactStore::key("teacher", &(&self.dataset_hash, &layers, &cfg, init_seed));
        let model_path = self.store.path(ArtifactKind::Models, &key, "json");
        let trace_path = self.store.path(ArtifactKind::Models, &format!("{key}.trace"), "json");
        if let (Some((model_text, model_hash)), Some((trace_text, trace_hash))) = (
            self.store.read_verified(&model_path)?,
            self.store.read_verified(&trace_path)?,
        ) {
            let model = DenseNet::from_checkpoint_json(&model_text).map_err(|e| resume_error(&model_path, e))?;
            let trace: TrainTrace = serde_json::from_str(&trace_text).map_err(|e| resume_error(&trace_path, e.into()))?;
            return Ok(TrainedModel {
                model: Stored {
                    value: model,
                    hash: model_hash,
                    path: model_path,
                    reused: true,
                },
                trace: Stored {
                    value: trace,
                    hash: trace_hash,
                    path: trace_path,
                    reused: true,
                },
            });
        }
        log::info!("training teacher {layers:?} for seed {seed}");
        let init = DenseNet::init(&layers, init_seed)?;
        let (model, trace) = train(&init, &self.train, Some(&self.test), &cfg, None)?;
        let trace_hash = self.store.write_atomic(&trace_path, &serde_json::to_string(&trace)?)?;
        let model_hash = self.store.write_atomic(&model_path, &model.to_checkpoint_json())?;
        Ok(TrainedModel {
            model: Stored {
                value: model,
                hash: model_hash,
                path: model_path,
                reused: false,
            },
            trace: Stored {
                value: trace,
                hash: trace_hash,
                path: trace_path,
                reused: false,
            },
        })
    }

    /// Frozen teacher logits for every training sample.
    pub fn cache(&self, teacher: &TrainedModel) -> Result<Stored<TeacherCache>> {
        let key = ArtifactStore::key("cache", &(&teacher.model.hash, &self.dataset_hash));
        let tau = self.spec.distill.tau;
        self.store.fetch_or_build(
            self.store.path(ArtifactKind::Caches, &key, "csv"),
            || cache_teacher_logits(&teacher.model.value, &self.train, tau),
            TeacherCache::to_csv,
            TeacherCache::from_csv,
        )
    }

    /// Ensemble member `k` of the EL2N/GraNd ensemble, trained up to the snapshot epoch.
    fn ensemble_member(&self, seed: u64, k: usize) -> Result<Stored<DenseNet>> {
        let layers = self.layers(&self.spec.teacher);
        let snapshot = self.spec.snapshot_epoch();
        let member_seed = derive_seed(seed, role::ENSEMBLE_BASE + k as u64);
        let full = &self.spec.train;
        let cfg = TrainConfig {
            epochs: snapshot,
            lr_decay_epochs: full.lr_decay_epochs.iter().copied().filter(|&e| e < snapshot).collect(),
            seed: member_seed,
            ..full.clone()
        };
        let key = ArtifactStore::key("ensemble", &(&self.dataset_hash, &layers, &cfg, member_seed));
        self.store.fetch_or_build(
            self.store.path(ArtifactKind::Models, &key, "json"),
            || {
                let init = DenseNet::init(&layers, member_seed)?;
                Ok(train(&init, &self.train, None, &cfg, None)?.0)
            },
            DenseNet::to_checkpoint_json,
            |text, _| DenseNet::from_checkpoint_json(text),
        )
    }

    /// Importance scores for `method`; `None` for random pruning, which needs none.
    pub fn scores(&self, method: ScoreMethod, seed: u64) -> Result<Option<Stored<ScoreTable>>> {
        let snapshot = self.spec.snapshot_epoch();
        let ensemble = || -> Result<Vec<Stored<DenseNet>>> {
            (0..self.spec.pruning.ensemble_size)
                .map(|k| self.ensemble_member(seed, k))
                .collect()
        };
        let stored = match method {
            ScoreMethod::Random => return Ok(None),
            ScoreMethod::Forgetting => {
                let teacher = self.teacher(seed, &self.spec.teacher)?;
                let key = ArtifactStore::key("forgetting", &(&teacher.trace.hash, seed));
                self.store.fetch_or_build(
                    self.store.path(ArtifactKind::Scores, &key, "csv"),
                    || score_forgetting(&teacher.trace.value, seed),
                    ScoreTable::to_csv,
                    ScoreTable::from_csv,
                )?
            }
            ScoreMethod::El2n => {
                let members = ensemble()?;
                let hashes: Vec<&str> = members.iter().map(|m| m.hash.as_str()).collect();
                let key = ArtifactStore::key("el2n", &(&hashes, &self.dataset_hash, snapshot, seed));
                self.store.fetch_or_build(
                    self.store.path(ArtifactKind::Scores, &key, "csv"),
                    || {
                        let logits = members
                            .iter()
                            .map(|m| predict_logits(&m.value, &self.train))
                            .collect::<Result<Vec<_>>>()?;
                        score_el2n(&logits, &self.train, snapshot, seed)
                    },
                    ScoreTable::to_csv,
                    ScoreTable::from_csv,
                )?
            }
            ScoreMethod::Grand => {
                let members = ensemble()?;
                let hashes: Vec<&str> = members.iter().map(|m| m.hash.as_str()).collect();
                let mode = self.spec.pruning.grand_mode;
                let key = ArtifactStore::key("grand", &(&hashes, &self.dataset_hash, mode, snapshot, seed));
                self.store.fetch_or_build(
                    self.store.path(ArtifactKind::Scores, &key, "csv"),
                    || {
                        let nets: Vec<DenseNet> = members.iter().map(|m| m.value.clone()).collect();
                        score_grand(&nets, &self.train, mode, snapshot, seed)
                    },
                    ScoreTable::to_csv,
                    ScoreTable::from_csv,
                )?
            }
        };
        Ok(Some(stored))
    }

    /// Kept sample ids at fraction `f`.
    pub fn prune(
        &self,
        method: ScoreMethod,
        f: f64,
        seed: u64,
        scores: Option<&Stored<ScoreTable>>,
    ) -> Result<Stored<PruneResult>> {
        let n = self.train.len();
        let decode = PruneResult::from_csv;
        match (method, scores) {
            (ScoreMethod::Random, _) => {
                let key = ArtifactStore::key("prune-random", &(&self.dataset_hash, f, seed));
                self.store.fetch_or_build(
                    self.store.path(ArtifactKind::Prunes, &key, "csv"),
                    || prune_random_balanced(&self.train, f, seed),
                    PruneResult::to_csv,
                    decode,
                )
            }
            (_, Some(scores)) => {
                let key = ArtifactStore::key("prune-topk", &(&scores.hash, f, n));
                self.store.fetch_or_build(
                    self.store.path(ArtifactKind::Prunes, &key, "csv"),
                    || prune_topk(&scores.value, f, n),
                    PruneResult::to_csv,
                    decode,
                )
            }
            (_, None) => Err(Error::input(format!("{method} pruning needs a score table"))),
        }
    }

    /// Student on the pruned set, distilled from `kd = (cache, α)` or trained on labels alone.
    pub fn student(
        &self,
        seed: u64,
        prune: &Stored<PruneResult>,
        kd: Option<(&Stored<TeacherCache>, f64)>,
    ) -> Result<Stored<DenseNet>> {
        let layers = self.layers(&self.spec.student);
        let cfg = TrainConfig {
            seed: derive_seed(seed, role::STUDENT),
            ..self.spec.train.clone()
        };
        let d = &self.spec.distill;
        let key = ArtifactStore::key(
            if kd.is_some() { "student-kd" } else { "student" },
            &StudentKey {
                prune: &prune.hash,
                layers: &layers,
                cfg: &cfg,
                kd: kd.map(|(cache, alpha)| (cache.hash.as_str(), alpha, d.tau, d.scaling)),
            },
        );
        let setup = StudentSetup {
            arch: &layers,
            tau: d.tau,
            scaling: d.scaling,
            cfg: &cfg,
        };
        self.store.fetch_or_build(
            self.store.path(ArtifactKind::Models, &key, "json"),
            || {
                let pruned = self.train.subset(&prune.value.kept_ids)?;
                let (model, _) = match kd {
                    Some((cache, alpha)) => distill_train_with_alpha(&setup, &pruned, None, &cache.value, alpha)?,
                    None => train_without_teacher(&setup, &pruned, None)?,
                };
                Ok(model)
            },
            DenseNet::to_checkpoint_json,
            |text, _| DenseNet::from_checkpoint_json(text),
        )
    }

    /// Runs every `(seed, teacher, method, f, α)` cell and returns one record per cell.
    ///
    /// `first_only` restricts methods and α grid to their first entries (capacity sweeps).
    fn run_grid(&self, teachers: &[ArchSpec], first_only: bool) -> Result<Vec<RunRecord>> {
        let spec = &self.spec;
        let methods = if first_only {
            &spec.pruning.methods[..1]
        } else {
            &spec.pruning.methods[..]
        };
        let mut records = Vec::new();
        for &seed in &spec.seeds {
            for arch in teachers {
                let teacher = self.teacher(seed, arch)?;
                let teacher_accuracy = accuracy(&teacher.model.value, &self.test)?;
                let cache = self.cache(&teacher)?;
                for &method in methods {
                    let scores = self.scores(method, seed)?;
                    let scores_hash = scores.as_ref().map(|s| s.hash.clone()).unwrap_or_default();
                    for &f in &spec.pruning.fractions {
                        let prune = self.prune(method, f, seed, scores.as_ref())?;
                        let baseline = self.student(seed, &prune, None)?;
                        let baseline_accuracy = accuracy(&baseline.value, &self.test)?;
                        let mut alphas = spec.distill.alphas_at(f)?;
                        if first_only {
                            alphas.truncate(1);
                        }
                        for (alpha, alpha_source) in alphas {
                            let started = Instant::now();
                            let student = self.student(seed, &prune, Some((&cache, alpha)))?;
                            let kd_accuracy = accuracy(&student.value, &self.test)?;
                            log::info!(
                                "seed {seed} t{} {method} f={f} alpha={alpha}: kd {kd_accuracy:.4} / no-kd {baseline_accuracy:.4}",
                                arch.width()
                            );
                            records.push(RunRecord {
                                seed,
                                method,
                                f,
                                alpha,
                                alpha_source,
                                tau: spec.distill.tau,
                                teacher_width: arch.width(),
                                kept: prune.value.kept_ids.len(),
                                teacher_accuracy,
                                kd_accuracy,
                                baseline_accuracy,
                                wall_time_s: started.elapsed().as_secs_f64(),
                                dataset_hash: self.dataset_hash.clone(),
                                scores_hash: scores_hash.clone(),
                                prune_hash: prune.hash.clone(),
                                cache_hash: cache.hash.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(records)
    }

    fn finish(&self, kind: ReportKind, records: Vec<RunRecord>) -> Result<ExperimentReport> {
        let report = ExperimentReport::from_records(kind, self.spec.student.width(), records);
        emit_report(&report, &report_dir(&self.spec.out, kind))?;
        Ok(report)
    }
}

/// Where a pipeline of the given kind writes its report files.
pub fn report_dir(out: &Path, kind: ReportKind) -> std::path::PathBuf {
    out.join(ArtifactKind::Reports.dir_name()).join(kind.name())
}

fn resume_error(path: &Path, e: Error) -> Error {
    Error::Resume {
        path: path.to_path_buf(),
        message: format!("intact but unreadable: {e}"),
    }
}

/// Full grid: per seed one teacher, every method, fraction and α, with a
/// matched no-KD student per `(method, f)`. Resumes from existing artifacts.
pub fn run_pipeline(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let exp = Experiment::prepare(spec)?;
    let records = exp.run_grid(std::slice::from_ref(&spec.teacher), false)?;
    exp.finish(ReportKind::Pipeline, records)
}

/// One teacher per width in `capacity.teacher_widths` (same depth as the
/// configured teacher), distilling the student with the first method and α.
pub fn run_capacity_sweep(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    if spec.capacity.teacher_widths.is_empty() {
        return Err(Error::Validation(vec!["capacity.teacher_widths must not be empty".to_string()]));
    }
    let exp = Experiment::prepare(spec)?;
    let teachers: Vec<ArchSpec> = spec
        .capacity
        .teacher_widths
        .iter()
        .map(|&w| spec.teacher.with_width(w))
        .collect();
    let records = exp.run_grid(&teachers, true)?;
    exp.finish(ReportKind::Capacity, records)
}
