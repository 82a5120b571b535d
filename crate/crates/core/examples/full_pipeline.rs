// End-to-end pipeline on a small mixture: teacher, forgetting scores, pruning,
// students with and without KD, and the emitted report files. A second run
// reuses every stored artifact.

use kd_prune::data::MixtureSpec;
use kd_prune::harness::{run_pipeline, DataSource, ExperimentSpec};
use kd_prune::nn::TrainConfig;
use kd_prune::pruning::ScoreMethod;

pub fn small_spec(out: std::path::PathBuf) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        out,
        seeds: vec![0, 1],
        ..ExperimentSpec::default()
    };
    spec.dataset.label_noise = 0.1;
    spec.dataset.source = DataSource::Mixture(MixtureSpec {
        num_classes: 4,
        dim: 6,
        train_per_class: 60,
        test_per_class: 30,
        spread: 0.4,
        seed: 3,
    });
    spec.teacher.hidden = vec![32];
    spec.student.hidden = vec![8];
    spec.pruning.methods = vec![ScoreMethod::Random, ScoreMethod::Forgetting];
    spec.pruning.fractions = vec![0.2, 0.6];
    spec.distill.alphas = vec![0.5, 1.0];
    spec.train = TrainConfig {
        epochs: 10,
        lr_decay_epochs: vec![5],
        batch_size: 32,
        ..TrainConfig::default()
    };
    spec
}

pub fn run_example() -> kd_prune::Result<()> {
    let out = std::env::temp_dir().join(format!("kd-prune-example-pipeline-{}", std::process::id()));
    let spec = small_spec(out.clone());
    let report = run_pipeline(&spec)?;
    for a in &report.aggregates {
        println!(
            "{:<10} f={:<4} alpha={:<4} kd {:.3} ± {:.3}   no-kd {:.3} ± {:.3}",
            a.cell.method.name(),
            a.cell.f,
            a.cell.alpha,
            a.kd_mean,
            a.kd_std,
            a.baseline_mean,
            a.baseline_std
        );
    }
    for t in &report.trends {
        println!("trend {}: {}", t.name, if t.passed { "pass" } else { "fail" });
    }
    let again = run_pipeline(&spec)?;
    assert_eq!(
        kd_prune::harness::records_to_csv(&report.records),
        kd_prune::harness::records_to_csv(&again.records)
    );
    println!("second run reused the store; reports under {}", out.join("reports").display());
    std::fs::remove_dir_all(&out).map_err(|e| kd_prune::Error::input(e.to_string()))?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("pipeline example failed");
}
