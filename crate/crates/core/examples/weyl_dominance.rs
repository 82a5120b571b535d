// Removing columns can only shrink singular values.

use kd_prune::theory::singular_value_dominance;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> kd_prune::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in [2, 5, 12] {
        let n = 3 * d;
        let x = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
        let mut cols = sample(&mut rng, n, d + 1).into_vec();
        cols.sort_unstable();
        let x_f = x.select_columns(&cols);
        let dom = singular_value_dominance(&x, &x_f)?;
        let worst = dom.margins.iter().copied().fold(f64::INFINITY, f64::min);
        println!("d={d:<3} kept {} of {n} columns: dominance {} (smallest margin {worst:.3e})", d + 1, dom.holds);
        assert!(dom.holds);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("dominance example failed");
}
