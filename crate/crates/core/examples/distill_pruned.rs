// A teacher trained on all data, a frozen logit cache, and students trained on a
// 20% subset with and without the teacher.

use kd_prune::data::{gen_gaussian_mixture, inject_label_noise, MixtureSpec, NoiseSpec};
use kd_prune::distill::{cache_teacher_logits, distill_train_with_alpha, train_without_teacher, StudentSetup};
use kd_prune::nn::{accuracy, train, DenseNet, KdScaling, TrainConfig};
use kd_prune::pruning::prune_random_balanced;

pub fn run_example() -> kd_prune::Result<()> {
    let (clean, test) = gen_gaussian_mixture(&MixtureSpec {
        num_classes: 5,
        dim: 8,
        train_per_class: 120,
        test_per_class: 60,
        spread: 0.45,
        seed: 2,
    })?;
    let noisy = inject_label_noise(&clean, &NoiseSpec { flip_fraction: 0.1, seed: 2 })?;
    let cfg = TrainConfig {
        epochs: 20,
        lr_decay_epochs: vec![10, 15],
        batch_size: 64,
        ..TrainConfig::default()
    };

    let (teacher, _) = train(&DenseNet::init(&[8, 64, 5], 11)?, &noisy, None, &cfg, None)?;
    println!("teacher test accuracy {:.3}", accuracy(&teacher, &test)?);
    let cache = cache_teacher_logits(&teacher, &noisy, 4.0)?;

    let kept = prune_random_balanced(&noisy, 0.2, 0)?;
    let pruned = noisy.subset(&kept.kept_ids)?;
    let arch = [8, 16, 5];
    let setup = StudentSetup {
        arch: &arch,
        tau: 4.0,
        scaling: KdScaling::TauSquared,
        cfg: &cfg,
    };
    let (baseline, _) = train_without_teacher(&setup, &pruned, None)?;
    println!("no-KD student on {} samples: {:.3}", pruned.len(), accuracy(&baseline, &test)?);
    for alpha in [0.5, 1.0] {
        let (student, _) = distill_train_with_alpha(&setup, &pruned, None, &cache, alpha)?;
        println!("KD student alpha={alpha}: {:.3}", accuracy(&student, &test)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("distillation example failed");
}
