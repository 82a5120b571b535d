// Teachers of several widths distilled into the same narrow student.

use kd_prune::data::MixtureSpec;
use kd_prune::harness::{run_capacity_sweep, DataSource, ExperimentSpec};
use kd_prune::nn::TrainConfig;
use kd_prune::pruning::ScoreMethod;

pub fn run_example() -> kd_prune::Result<()> {
    let out = std::env::temp_dir().join(format!("kd-prune-example-capacity-{}", std::process::id()));
    let mut spec = ExperimentSpec {
        out: out.clone(),
        seeds: vec![0],
        ..ExperimentSpec::default()
    };
    spec.dataset.source = DataSource::Mixture(MixtureSpec {
        num_classes: 4,
        dim: 6,
        train_per_class: 60,
        test_per_class: 30,
        spread: 0.4,
        seed: 5,
    });
    spec.student.hidden = vec![8];
    spec.capacity.teacher_widths = vec![4, 8, 32];
    spec.pruning.methods = vec![ScoreMethod::Random];
    spec.pruning.fractions = vec![0.2, 0.9];
    spec.distill.alphas = vec![1.0];
    spec.train = TrainConfig {
        epochs: 40,
        lr_decay_epochs: vec![30],
        batch_size: 32,
        ..TrainConfig::default()
    };
    let report = run_capacity_sweep(&spec)?;
    for a in &report.aggregates {
        println!(
            "teacher width {:<3} (teacher acc {:.3})  f={:<4} student {:.3}",
            a.cell.teacher_width, a.teacher_mean, a.cell.f, a.kd_mean
        );
    }
    for t in &report.trends {
        println!("{} [{}]: {}", t.name, if t.passed { "pass" } else { "fail" }, t.detail);
    }
    std::fs::remove_dir_all(&out).map_err(|e| kd_prune::Error::input(e.to_string()))?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("capacity example failed");
}
