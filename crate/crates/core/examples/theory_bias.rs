// Closed-form bias of the self-distilled ridge student, checked against simulation,
// and the comparison of a full-data teacher with a same-data teacher.

use kd_prune::data::{gen_linear_regression, RegressionSpec};
use kd_prune::theory::{bias_closed_form, monte_carlo_summary, verify_theorem};

pub fn run_example() -> kd_prune::Result<()> {
    let problem = gen_linear_regression(&RegressionSpec {
        dim: 10,
        samples: 200,
        noise_std: 1.0,
        lambda: 1.0,
        seed: 7,
    })?;
    let student = problem.random_view(0.2, 7)?;
    let full = problem.full_view();

    for alpha in [0.0, 0.5, 1.0] {
        let closed = bias_closed_form(&problem, &student, &full, alpha)?;
        let sim = monte_carlo_summary(&problem, &student, &full, alpha, 20_000, 1)?;
        println!(
            "alpha={alpha:<4} closed form {closed:.6}  simulated {:.6} ± {:.6}",
            sim.bias(),
            sim.bias_std_error()
        );
    }

    for f in [0.1, 0.3, 0.6, 0.9] {
        let check = verify_theorem(&problem, f, 1.0, 0, 7)?;
        println!(
            "f={f}: full-data teacher {:.6} <= same-data teacher {:.6}: {}",
            check.full_teacher.bias_closed_form, check.same_data_teacher.bias_closed_form, check.holds
        );
        assert!(check.holds);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("theory example failed");
}
