//! End-to-end behaviour of the experiment harness on small synthetic data.

use std::fs;
use std::path::Path;

use kd_prune::data::MixtureSpec;
use kd_prune::digest::sha256_hex;
use kd_prune::distill::AlphaPolicy;
use kd_prune::harness::{
    aggregate, load_records_csv, report_dir, run_capacity_sweep, run_pipeline, AlphaSource, DataSource, Experiment,
    ExperimentSpec, ReportKind,
};
use kd_prune::nn::TrainConfig;
use kd_prune::pruning::ScoreMethod;
use kd_prune::Error;

fn tiny_spec(out: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        out: out.to_path_buf(),
        seeds: vec![0, 1],
        ..ExperimentSpec::default()
    };
    spec.dataset.label_noise = 0.1;
    spec.dataset.source = DataSource::Mixture(MixtureSpec {
        num_classes: 10,
        dim: 4,
        train_per_class: 20,
        test_per_class: 5,
        spread: 0.3,
        seed: 9,
    });
    spec.teacher.hidden = vec![8];
    spec.student.hidden = vec![4];
    spec.pruning.methods = vec![ScoreMethod::Random, ScoreMethod::Forgetting];
    spec.pruning.fractions = vec![0.3, 1.0];
    spec.pruning.ensemble_size = 2;
    spec.distill.alphas = vec![0.5];
    spec.train = TrainConfig {
        epochs: 3,
        lr_decay_epochs: vec![2],
        batch_size: 16,
        ..TrainConfig::default()
    };
    spec
}

fn records_csv(out: &Path, kind: ReportKind) -> String {
    fs::read_to_string(report_dir(out, kind).join("records.csv")).unwrap()
}

#[test]
fn record_count_matches_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(dir.path());
    spec.seeds = (0..5).collect();
    spec.pruning.fractions = (1..=10).map(|k| k as f64 / 10.0).collect();
    spec.train.epochs = 1;
    spec.train.lr_decay_epochs.clear();
    let report = run_pipeline(&spec).unwrap();
    assert_eq!(report.records.len(), 2 * 10 * 5);
    assert_eq!(report.aggregates.len(), 2 * 10);
    assert!(report.aggregates.iter().all(|a| a.runs == 5));
    // every KD record has its matched no-KD accuracy
    assert!(report.records.iter().all(|r| r.baseline_accuracy.is_finite()));
    assert_eq!(records_csv(dir.path(), ReportKind::Pipeline).lines().count(), 1 + 100);
}

#[test]
fn identical_specs_give_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&tiny_spec(a.path())).unwrap();
    run_pipeline(&tiny_spec(b.path())).unwrap();
    assert_eq!(
        records_csv(a.path(), ReportKind::Pipeline),
        records_csv(b.path(), ReportKind::Pipeline)
    );
}

#[test]
fn resuming_after_scoring_matches_an_uninterrupted_run() {
    let interrupted = tempfile::tempdir().unwrap();
    let spec = tiny_spec(interrupted.path());
    {
        let exp = Experiment::prepare(&spec).unwrap();
        for &seed in &spec.seeds {
            for &m in &spec.pruning.methods {
                exp.scores(m, seed).unwrap();
            }
        }
    }
    assert!(!report_dir(interrupted.path(), ReportKind::Pipeline).join("records.csv").exists());
    run_pipeline(&spec).unwrap();

    let fresh = tempfile::tempdir().unwrap();
    run_pipeline(&tiny_spec(fresh.path())).unwrap();
    assert_eq!(
        records_csv(interrupted.path(), ReportKind::Pipeline),
        records_csv(fresh.path(), ReportKind::Pipeline)
    );

    // a third run reuses everything and still agrees
    run_pipeline(&spec).unwrap();
    assert_eq!(
        records_csv(interrupted.path(), ReportKind::Pipeline),
        records_csv(fresh.path(), ReportKind::Pipeline)
    );
}

#[test]
fn corrupted_artifact_is_a_resume_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path());
    run_pipeline(&spec).unwrap();
    let score_file = fs::read_dir(dir.path().join("scores"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let mut text = fs::read_to_string(&score_file).unwrap();
    text.push_str("999999,0.5\n");
    fs::write(&score_file, text).unwrap();
    match run_pipeline(&spec) {
        Err(Error::Resume { path, .. }) => assert_eq!(path, score_file),
        other => panic!("expected a resume error, got {other:?}"),
    }
}

#[test]
fn records_carry_the_hashes_of_stored_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&tiny_spec(dir.path())).unwrap();
    let mut stored = std::collections::BTreeSet::new();
    for kind in ["scores", "prunes", "caches"] {
        for entry in fs::read_dir(dir.path().join(kind)).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "csv") {
                stored.insert(sha256_hex(&fs::read(&path).unwrap()));
            }
        }
    }
    for r in &report.records {
        assert!(stored.contains(&r.prune_hash), "prune hash {}", r.prune_hash);
        assert!(stored.contains(&r.cache_hash), "cache hash {}", r.cache_hash);
        match r.method {
            ScoreMethod::Random => assert!(r.scores_hash.is_empty()),
            _ => assert!(stored.contains(&r.scores_hash), "scores hash {}", r.scores_hash),
        }
        assert_eq!(r.dataset_hash.len(), 64);
    }
}

#[test]
fn reloaded_records_reproduce_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&tiny_spec(dir.path())).unwrap();
    let reloaded = load_records_csv(&report_dir(dir.path(), ReportKind::Pipeline).join("records.csv")).unwrap();
    assert_eq!(aggregate(&reloaded), report.aggregates);
    let plot = fs::read_to_string(report_dir(dir.path(), ReportKind::Pipeline).join("plot_accuracy.csv")).unwrap();
    // two KD series and two no-KD series
    assert!(plot.lines().all(|l| l.split(',').count() == 1 + 2 * 4));
}

#[test]
fn alpha_zero_student_is_the_no_kd_student() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(dir.path());
    spec.seeds = vec![3];
    spec.pruning.methods = vec![ScoreMethod::Random];
    spec.pruning.fractions = vec![1.0];
    spec.distill.alphas = vec![0.0];
    let report = run_pipeline(&spec).unwrap();
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.records[0].kd_accuracy, report.records[0].baseline_accuracy);

    let exp = Experiment::prepare(&spec).unwrap();
    let teacher = exp.teacher(3, &spec.teacher).unwrap();
    let cache = exp.cache(&teacher).unwrap();
    let prune = exp.prune(ScoreMethod::Random, 1.0, 3, None).unwrap();
    let plain = exp.student(3, &prune, None).unwrap();
    let distilled = exp.student(3, &prune, Some((&cache, 0.0))).unwrap();
    assert_ne!(plain.path, distilled.path);
    assert_eq!(plain.hash, distilled.hash);
    assert_eq!(plain.value, distilled.value);
}

#[test]
fn policy_alphas_follow_the_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(dir.path());
    spec.seeds = vec![0];
    spec.pruning.methods = vec![ScoreMethod::Random];
    spec.pruning.fractions = vec![0.3, 0.5, 1.0];
    spec.distill.alphas.clear();
    spec.distill.policy = Some(AlphaPolicy::default());
    let report = run_pipeline(&spec).unwrap();
    let alphas: Vec<(f64, f64)> = report.records.iter().map(|r| (r.f, r.alpha)).collect();
    assert_eq!(alphas, vec![(0.3, 1.0), (0.5, 0.75), (1.0, 0.5)]);
    assert!(report.records.iter().all(|r| r.alpha_source == AlphaSource::Policy));
}

#[test]
fn el2n_and_grand_pipelines_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(dir.path());
    spec.seeds = vec![0];
    spec.pruning.methods = vec![ScoreMethod::El2n, ScoreMethod::Grand];
    let report = run_pipeline(&spec).unwrap();
    assert_eq!(report.records.len(), 4);
    // the ensemble is shared by both scorers
    let models = fs::read_dir(dir.path().join("models"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("ensemble-"))
        .filter(|e| !e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".sha256"))
        .count();
    assert_eq!(models, 2);
}

#[test]
fn capacity_sweep_records_one_run_per_width_fraction_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(dir.path());
    spec.seeds = (0..5).collect();
    spec.student.hidden = vec![4];
    spec.capacity.teacher_widths = vec![2, 4, 16];
    spec.pruning.fractions = vec![0.1, 0.9];
    let report = run_capacity_sweep(&spec).unwrap();
    assert_eq!(report.records.len(), 30);
    let widths: std::collections::BTreeSet<usize> = report.aggregates.iter().map(|a| a.cell.teacher_width).collect();
    assert_eq!(widths.into_iter().collect::<Vec<_>>(), vec![2, 4, 16]);
    assert!(report.aggregates.iter().all(|a| (0.0..=1.0).contains(&a.teacher_mean)));
    assert_eq!(report.trends.len(), 1);
    assert!(report.trends[0].name.starts_with("smaller_teacher_favored_at_low_f"));
}

#[test]
fn single_width_capacity_sweep_reduces_to_the_pipeline() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(a.path());
    spec.pruning.methods = vec![ScoreMethod::Forgetting];
    spec.capacity.teacher_widths = vec![8];
    run_pipeline(&spec).unwrap();
    spec.out = b.path().to_path_buf();
    run_capacity_sweep(&spec).unwrap();
    assert_eq!(
        records_csv(a.path(), ReportKind::Pipeline),
        records_csv(b.path(), ReportKind::Capacity)
    );
}

#[test]
fn invalid_spec_is_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(&dir.path().join("never-created"));
    spec.seeds.clear();
    spec.pruning.fractions = vec![0.0];
    match run_pipeline(&spec) {
        Err(Error::Validation(problems)) => assert_eq!(problems.len(), 2, "{problems:?}"),
        other => panic!("expected validation error, got {other:?}"),
    }
    assert!(!dir.path().join("never-created").exists());
}
