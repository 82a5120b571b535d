// The combined distillation loss and its analytic gradient against central differences.

use kd_prune::nn::{kd_loss, softmax_temperature};

pub fn run_example() -> kd_prune::Result<()> {
    let student = [0.3, -1.2, 2.0, 0.1, -0.4];
    let teacher = [1.0, -0.5, 3.0, 0.0, -2.0];
    let label = 2;
    println!("teacher at tau=1: {:?}", softmax_temperature(&teacher, 1.0)?);
    println!("teacher at tau=4: {:?}", softmax_temperature(&teacher, 4.0)?);

    for (alpha, tau) in [(0.0, 1.0), (0.5, 4.0), (1.0, 8.0)] {
        let (loss, grad) = kd_loss(&student, &teacher, label, alpha, tau)?;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..student.len() {
            let (mut up, mut down) = (student, student);
            up[k] += h;
            down[k] -= h;
            let numeric = (kd_loss(&up, &teacher, label, alpha, tau)?.0 - kd_loss(&down, &teacher, label, alpha, tau)?.0) / (2.0 * h);
            worst = worst.max((numeric - grad[k]).abs());
        }
        println!("alpha={alpha} tau={tau}: loss {loss:.6}, max |analytic - numeric| = {worst:.2e}");
        assert!(worst < 1e-6);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("gradient check example failed");
}
