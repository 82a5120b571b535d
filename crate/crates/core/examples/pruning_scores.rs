// EL2N, GraNd and forgetting scores from short training runs, then top-k and
// class-balanced random selection.

use kd_prune::data::{gen_gaussian_mixture, MixtureSpec};
use kd_prune::nn::{predict_logits, train, DenseNet, TrainConfig};
use kd_prune::pruning::{
    prune_random_balanced, prune_topk, score_el2n, score_forgetting, score_grand, GrandMode, ScoreTable,
};

fn summary(table: &ScoreTable) -> String {
    let values: Vec<f64> = table.scores.values().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    format!("{} scores: mean {mean:.3}, max {max:.3}", table.method)
}

pub fn run_example() -> kd_prune::Result<()> {
    let (train_set, _) = gen_gaussian_mixture(&MixtureSpec {
        num_classes: 4,
        dim: 6,
        train_per_class: 50,
        test_per_class: 10,
        spread: 0.4,
        seed: 1,
    })?;
    let cfg = TrainConfig {
        epochs: 8,
        lr_decay_epochs: vec![],
        batch_size: 32,
        ..TrainConfig::default()
    };
    let mut ensemble = Vec::new();
    let mut last_trace = None;
    for k in 0..3 {
        let init = DenseNet::init(&[6, 16, 4], k)?;
        let (model, trace) = train(&init, &train_set, None, &TrainConfig { seed: k, ..cfg.clone() }, None)?;
        ensemble.push(model);
        last_trace = Some(trace);
    }
    let logits = ensemble
        .iter()
        .map(|m| predict_logits(m, &train_set))
        .collect::<kd_prune::Result<Vec<_>>>()?;

    let el2n = score_el2n(&logits, &train_set, cfg.epochs, 0)?;
    let grand = score_grand(&ensemble, &train_set, GrandMode::Full, cfg.epochs, 0)?;
    let forgetting = score_forgetting(last_trace.as_ref().expect("trained"), 0)?;
    for table in [&el2n, &grand, &forgetting] {
        println!("{}", summary(table));
    }

    let hardest = prune_topk(&el2n, 0.25, train_set.len())?;
    println!("EL2N keeps {} samples; hardest ids {:?}", hardest.kept_ids.len(), &hardest.kept_ids[..5]);
    let random = prune_random_balanced(&train_set, 0.25, 0)?;
    let kept = train_set.subset(&random.kept_ids)?;
    println!("balanced random keeps per class {:?}", kept.class_counts());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("pruning example failed");
}
