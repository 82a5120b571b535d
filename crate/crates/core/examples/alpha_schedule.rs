// The fraction-dependent KD weight: more trust in the teacher when little data is kept.

use kd_prune::distill::{alpha_schedule, AlphaPolicy};

pub fn run_example() -> kd_prune::Result<()> {
    let policy = AlphaPolicy::default();
    println!("knots: {:?}", policy.knots());
    for f in [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0] {
        println!("f={f:<4} alpha={:.3}", alpha_schedule(f, &policy)?);
    }
    let custom = AlphaPolicy::new(vec![(0.2, 0.9), (0.8, 0.1)])?;
    println!("custom policy at f=0.5: {:.3}", alpha_schedule(0.5, &custom)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("alpha schedule example failed");
}
