//! Property-based invariants across modules.

use std::collections::BTreeMap;
use std::path::Path;

use kd_prune::data::{inject_label_noise, LabeledDataset, NoiseSpec, Split};
use kd_prune::nn::{kd_loss, softmax_temperature, TrainTrace};
use kd_prune::pruning::{
    kept_count, largest_remainder, prune_topk, score_el2n, score_forgetting, ScoreMethod, ScoreTable,
};
use kd_prune::theory::{ridge_fit, sd_student_fit, singular_value_dominance};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use proptest::prelude::*;

fn logits(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, len)
}

fn table(scores: &[f64]) -> ScoreTable {
    ScoreTable {
        method: ScoreMethod::El2n,
        scores: scores.iter().copied().enumerate().collect(),
        ensemble_size: 1,
        snapshot_epoch: 1,
        seed: 0,
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(z in logits(6), tau in 0.05..50.0f64, shift in -100.0..100.0f64) {
        let p = softmax_temperature(&z, tau).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let q = softmax_temperature(&shifted, tau).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kd_loss_and_gradient_are_affine_in_alpha(
        zs in logits(5), zt in logits(5), label in 0usize..5, alpha in 0.0..=1.0f64, tau in 1.0..8.0f64,
    ) {
        let (l0, g0) = kd_loss(&zs, &zt, label, 0.0, tau).unwrap();
        let (l1, g1) = kd_loss(&zs, &zt, label, 1.0, tau).unwrap();
        let (l, g) = kd_loss(&zs, &zt, label, alpha, tau).unwrap();
        let expect = (1.0 - alpha) * l0 + alpha * l1;
        prop_assert!((l - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        for k in 0..5 {
            let e = (1.0 - alpha) * g0[k] + alpha * g1[k];
            prop_assert!((g[k] - e).abs() <= 1e-9 * (1.0 + e.abs()));
        }
        // gradients of both terms sum to zero over classes
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-9);
    }

    #[test]
    fn topk_matches_sorted_oracle_and_nests(scores in prop::collection::vec(0u8..4, 1..40), a in 1u32..100, b in 1u32..100) {
        let values: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
        let n = values.len();
        let t = table(&values);
        let (fa, fb) = (a.min(b) as f64 / 100.0, a.max(b) as f64 / 100.0);
        let (Ok(small), Ok(large)) = (prune_topk(&t, fa, n), prune_topk(&t, fb, n)) else {
            // a fraction that rounds to zero samples is rejected
            prop_assert!(kept_count(fa, n).is_err());
            return Ok(());
        };
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap().then(i.cmp(&j)));
        prop_assert_eq!(&large.kept_ids[..], &oracle[..large.kept_ids.len()]);
        prop_assert_eq!(&small.kept_ids[..], &large.kept_ids[..small.kept_ids.len()]);
    }

    #[test]
    fn topk_ignores_how_the_table_was_built(values in prop::collection::vec(0.0..1.0f64, 2..30), f in 0.05..=1.0f64) {
        let n = values.len();
        let forward = table(&values);
        let reversed = ScoreTable {
            scores: values.iter().copied().enumerate().rev().collect::<BTreeMap<_, _>>(),
            ..forward.clone()
        };
        if let Ok(a) = prune_topk(&forward, f, n) {
            prop_assert_eq!(a.kept_ids, prune_topk(&reversed, f, n).unwrap().kept_ids);
        }
    }

    #[test]
    fn el2n_lies_in_unit_range(rows in prop::collection::vec((logits(4), 0usize..4), 1..20)) {
        let n = rows.len();
        let mut z = Array2::zeros((n, 4));
        for (i, (l, _)) in rows.iter().enumerate() {
            for (k, v) in l.iter().enumerate() {
                z[(i, k)] = *v;
            }
        }
        let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let ds = LabeledDataset::new(Array2::zeros((n, 2)), labels, 4, Split::Train).unwrap();
        let scores = score_el2n(&[z], &ds, 1, 0).unwrap();
        for &s in scores.scores.values() {
            prop_assert!((0.0..=2f64.sqrt() + 1e-12).contains(&s));
        }
    }

    #[test]
    fn forgetting_scores_are_bounded(matrix in prop::collection::vec(prop::collection::vec(any::<bool>(), 6), 1..12)) {
        let epochs = matrix.len();
        let trace = TrainTrace {
            sample_ids: (0..6).collect(),
            correctness: matrix.clone(),
            ..TrainTrace::default()
        };
        let scores = score_forgetting(&trace, 0).unwrap();
        for (k, &s) in scores.scores.values().enumerate() {
            let ever = matrix.iter().any(|row| row[k]);
            if ever {
                prop_assert!(s <= (epochs / 2) as f64);
            } else {
                prop_assert_eq!(s, (epochs + 1) as f64);
            }
        }
    }

    #[test]
    fn column_subsets_never_gain_singular_values(
        d in 2usize..8, extra in 0usize..10, seed in any::<u64>(), keep_mask in prop::collection::vec(any::<bool>(), 20),
    ) {
        use rand::{Rng, SeedableRng};
        let n = d + extra + 1;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, n, |_, _| rng.random_range(-2.0..2.0));
        // the subset must keep at least d columns
        let mut cols: Vec<usize> = (0..n).filter(|&j| keep_mask[j % keep_mask.len()]).collect();
        for j in 0..n {
            if cols.len() >= d {
                break;
            }
            if !cols.contains(&j) {
                cols.push(j);
            }
        }
        cols.sort_unstable();
        let dom = singular_value_dominance(&x, &x.select_columns(&cols)).unwrap();
        prop_assert!(dom.holds, "margins {:?}", dom.margins);
    }

    #[test]
    fn self_distillation_without_teacher_is_ridge(d in 1usize..6, extra in 0usize..20, seed in any::<u64>(), lambda in 1e-3..10.0f64) {
        use rand::{Rng, SeedableRng};
        let n = d + extra;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let teacher = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let ridge = ridge_fit(&x, &y, lambda).unwrap();
        let student = sd_student_fit(&x, &y, &teacher, 0.0, lambda).unwrap();
        prop_assert!((&ridge - &student).norm() <= 1e-12 * ridge.norm().max(1e-300));
    }

    #[test]
    fn apportionment_is_exact_and_fair(sizes in prop::collection::vec(1usize..50, 1..8), num in 1usize..=100) {
        let n: usize = sizes.iter().sum();
        let total = (n * num).div_ceil(100).min(n);
        let quotas = largest_remainder(total, &sizes);
        prop_assert_eq!(quotas.iter().sum::<usize>(), total);
        for (&q, &s) in quotas.iter().zip(&sizes) {
            let lower = total * s / n;
            prop_assert!(q == lower || q == lower + 1);
        }
    }

    #[test]
    fn score_tables_round_trip_exactly(values in prop::collection::vec(-1e6..1e6f64, 1..30)) {
        let t = table(&values);
        let back = ScoreTable::from_csv(&t.to_csv(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn label_noise_flips_exactly_the_requested_count(n in 2usize..200, frac in 0.0..=1.0f64, seed in any::<u64>()) {
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ds = LabeledDataset::new(Array2::zeros((n, 1)), labels.clone(), 3, Split::Train).unwrap();
        let noisy = inject_label_noise(&ds, &NoiseSpec { flip_fraction: frac, seed }).unwrap();
        let flipped = labels.iter().zip(noisy.labels()).filter(|(a, b)| a != b).count();
        prop_assert_eq!(flipped, ((frac * n as f64) + 0.5).floor() as usize);
    }
}
