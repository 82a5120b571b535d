use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::{check_alpha, RidgeSolver};
use super::spectrum::Spectrum;
use super::{PrunedView, RegressionProblem};
use crate::error::{Error, Result};
use crate::rng::{stream, substream};

/// Absolute slack allowed when comparing the two sides of the teacher-size inequality.
pub const THEOREM_SLACK: f64 = 1e-12;

const MC_CHUNK: usize = 2048;

/// Bias of one student/teacher configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub bias_closed_form: f64,
    /// `None` when no simulation was requested.
    pub bias_monte_carlo: Option<f64>,
    pub trials: usize,
    pub alpha: f64,
    pub f: f64,
    pub f_t: f64,
}

/// Squared norm of the expected student error, `‖E_η[θ̂_s − θ*]‖²`, from the
/// SVDs of the student and teacher views.
///
/// Logs a warning when either view is numerically rank deficient; the value
/// stays finite because `λ > 0`.
pub fn bias_closed_form(
    problem: &RegressionProblem,
    student_view: &PrunedView,
    teacher_view: &PrunedView,
    alpha: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let student = Spectrum::of(student_view.x_f())?;
    let teacher = Spectrum::of(teacher_view.x_f())?;
    if student.is_rank_deficient() || teacher.is_rank_deficient() {
        log::warn!(
            "rank-deficient view in bias evaluation (student N_f={}, teacher N_f={})",
            student_view.len(),
            teacher_view.len()
        );
    }
    Ok(bias_from_spectra(
        problem.theta_star(),
        &student,
        &teacher,
        alpha,
        problem.lambda(),
    ))
}

/// Evaluates
/// `Σ_i (λ/(σ_i²+λ))² (Σ_j ⟨θ*,u′_j⟩⟨u′_j,u_i⟩ (1 + α σ_i²/(σ′_j²+λ)))²`
/// with `(σ, u)` from the student view and `(σ′, u′)` from the teacher view.
pub fn bias_from_spectra(
    theta_star: &DVector<f64>,
    student: &Spectrum,
    teacher: &Spectrum,
    alpha: f64,
    lambda: f64,
) -> f64 {
    let d = student.dim();
    let teacher_proj: Vec<f64> = (0..d)
        .map(|j| teacher.left_vectors.column(j).dot(theta_star))
        .collect();
    let mut total = 0.0;
    for i in 0..d {
        let u_i = student.left_vectors.column(i);
        let s2 = student.singular_values[i].powi(2);
        // Σ_j ⟨θ*,u′_j⟩⟨u′_j,u_i⟩ collapses to ⟨θ*,u_i⟩ since U′ is square orthogonal,
        // leaving only the α-weighted part to sum over the teacher basis.
        let mut weighted = 0.0;
        for (j, &proj) in teacher_proj.iter().enumerate() {
            let sp2 = teacher.singular_values[j].powi(2);
            weighted += proj * teacher.left_vectors.column(j).dot(&u_i) / (sp2 + lambda);
        }
        let inner = u_i.dot(theta_star) + alpha * s2 * weighted;
        let shrink = lambda / (s2 + lambda);
        total += shrink * shrink * inner * inner;
    }
    total
}

/// Sample mean and covariance of the student error over simulated label noise.
#[derive(Debug, Clone)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub mean_error: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl MonteCarloSummary {
    /// `‖mean error‖²`, the simulated counterpart of the closed-form bias.
    pub fn bias(&self) -> f64 {
        self.mean_error.norm_squared()
    }

    /// Delta-method standard error of [`bias`](Self::bias): `2 √(mᵀ Σ m / T)`.
    pub fn bias_std_error(&self) -> f64 {
        let m = &self.mean_error;
        let q = (m.transpose() * &self.covariance * m)[(0, 0)].max(0.0);
        2.0 * (q / self.trials as f64).sqrt()
    }

    /// `tr(Σ)/T`, the expected upward offset of `‖mean‖²` over the true bias.
    pub fn expected_offset(&self) -> f64 {
        self.covariance.trace() / self.trials as f64
    }
}

/// Simulates `trials` independent noise draws and returns `‖mean(θ̂_s − θ*)‖²`.
pub fn bias_monte_carlo(
    problem: &RegressionProblem,
    student_view: &PrunedView,
    teacher_view: &PrunedView,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    Ok(monte_carlo_summary(problem, student_view, teacher_view, alpha, trials, seed)?.bias())
}

/// Full simulation output behind [`bias_monte_carlo`].
///
/// Trials are split into fixed-size chunks, each drawing from its own
/// seed-indexed stream; chunk sums are combined in chunk order, so the result
/// does not depend on how many threads run the chunks.
pub fn monte_carlo_summary(
    problem: &RegressionProblem,
    student_view: &PrunedView,
    teacher_view: &PrunedView,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    let mut grid = monte_carlo_grid(problem, student_view, &[teacher_view], &[alpha], trials, seed)?;
    Ok(grid.remove(0).remove(0))
}

/// Simulates one student view against several teachers and KD weights at once.
///
/// The student estimate is `(1−α)·fit(y_f) + α·fit(X_fᵀ θ_t)`, so every
/// `(teacher, α)` pair is evaluated on the same label draws. Each entry of
/// the result (`[teacher][alpha]`) is an ordinary `trials`-sample estimate;
/// entries are correlated with each other through the shared draws.
pub fn monte_carlo_grid(
    problem: &RegressionProblem,
    student_view: &PrunedView,
    teacher_views: &[&PrunedView],
    alphas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<MonteCarloSummary>>> {
    for &alpha in alphas {
        check_alpha(alpha)?;
    }
    if trials == 0 {
        return Err(Error::input("Monte-Carlo bias needs at least one trial"));
    }
    let n = problem.num_samples();
    for view in std::iter::once(student_view).chain(teacher_views.iter().copied()) {
        if view.indices().iter().any(|&i| i >= n) || view.x_f().nrows() != problem.dim() {
            return Err(Error::input("view does not belong to this problem"));
        }
    }
    let lambda = problem.lambda();
    let teachers = teacher_views
        .iter()
        .map(|view| {
            let solver = if view.indices() == student_view.indices() {
                None
            } else {
                Some(RidgeSolver::new(view.x_f(), lambda)?)
            };
            Ok((view.indices(), solver))
        })
        .collect::<Result<Vec<_>>>()?;
    let sim = Simulation {
        clean: problem.noiseless_labels().as_slice().to_vec(),
        noise_std: problem.noise_std(),
        theta_star: problem.theta_star().as_slice().to_vec(),
        student_idx: student_view.indices(),
        student: RidgeSolver::new(student_view.x_f(), lambda)?,
        teachers,
        alphas,
    };

    let chunks = trials.div_ceil(MC_CHUNK);
    let partials: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(trials - c * MC_CHUNK);
            sim.run_chunk(seed, c as u64, count)
        })
        .collect();

    let d = problem.dim();
    let cells = teacher_views.len() * alphas.len();
    let mut totals: Vec<Moments> = (0..cells).map(|_| Moments::new(d)).collect();
    for chunk in &partials {
        for (total, p) in totals.iter_mut().zip(chunk) {
            total.merge(p);
        }
    }
    let t = trials as f64;
    let summarize = |total: &Moments| {
        let mean = DVector::from_iterator(d, total.sum.iter().map(|s| s / t));
        let mut covariance = DMatrix::zeros(d, d);
        if trials > 1 {
            for i in 0..d {
                for j in 0..d {
                    covariance[(i, j)] = (total.outer[i * d + j] - t * mean[i] * mean[j]) / (t - 1.0);
                }
            }
        }
        MonteCarloSummary {
            trials,
            mean_error: mean,
            covariance,
        }
    };
    Ok(totals
        .chunks(alphas.len().max(1))
        .take(teacher_views.len())
        .map(|row| row.iter().map(summarize).collect())
        .collect())
}

struct Simulation<'a> {
    clean: Vec<f64>,
    noise_std: f64,
    theta_star: Vec<f64>,
    student_idx: &'a [usize],
    student: RidgeSolver,
    /// Teacher indices and solver; `None` when the teacher sees the student's own view.
    teachers: Vec<(&'a [usize], Option<RidgeSolver>)>,
    alphas: &'a [f64],
}

struct Moments {
    sum: Vec<f64>,
    outer: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            outer: vec![0.0; d * d],
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.outer.iter_mut().zip(&other.outer).for_each(|(a, b)| *a += b);
    }

    fn add(&mut self, err: &[f64]) {
        let d = err.len();
        for i in 0..d {
            self.sum[i] += err[i];
            for j in 0..d {
                self.outer[i * d + j] += err[i] * err[j];
            }
        }
    }
}

impl Simulation<'_> {
    /// Moments for every `(teacher, α)` pair, teacher-major.
    fn run_chunk(&self, seed: u64, chunk: u64, count: usize) -> Vec<Moments> {
        let d = self.theta_star.len();
        let mut rng = substream(seed, stream::MONTE_CARLO_BASE + chunk);
        let mut moments: Vec<Moments> = (0..self.teachers.len() * self.alphas.len())
            .map(|_| Moments::new(d))
            .collect();
        let needs_teacher = self.alphas.iter().any(|&a| a > 0.0);
        let mut y = vec![0.0; self.clean.len()];
        let mut y_s = vec![0.0; self.student_idx.len()];
        let mut y_t = Vec::new();
        let mut pseudo = vec![0.0; self.student_idx.len()];
        let mut own = vec![0.0; d];
        let mut theta_t = vec![0.0; d];
        let mut from_teacher = vec![0.0; d];
        let mut err = vec![0.0; d];
        for _ in 0..count {
            for (v, &c) in y.iter_mut().zip(&self.clean) {
                let z: f64 = rng.sample(StandardNormal);
                *v = c + self.noise_std * z;
            }
            for (v, &i) in y_s.iter_mut().zip(self.student_idx) {
                *v = y[i];
            }
            self.student.fit_into(&y_s, &mut own);
            for (t, (teacher_idx, solver)) in self.teachers.iter().enumerate() {
                if needs_teacher {
                    match solver {
                        Some(solver) => {
                            y_t.clear();
                            y_t.extend(teacher_idx.iter().map(|&i| y[i]));
                            solver.fit_into(&y_t, &mut theta_t);
                        }
                        None => theta_t.copy_from_slice(&own),
                    }
                    self.student.predict_into(&theta_t, &mut pseudo);
                    self.student.fit_into(&pseudo, &mut from_teacher);
                }
                for (a, &alpha) in self.alphas.iter().enumerate() {
                    for i in 0..d {
                        let estimate = if alpha == 0.0 {
                            own[i]
                        } else {
                            (1.0 - alpha) * own[i] + alpha * from_teacher[i]
                        };
                        err[i] = estimate - self.theta_star[i];
                    }
                    moments[t * self.alphas.len() + a].add(&err);
                }
            }
        }
        moments
    }
}

/// Outcome of comparing a full-data teacher against a same-data teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub full_teacher: BiasReport,
    pub same_data_teacher: BiasReport,
    /// `same_data − full_teacher` (closed form); nonnegative when the inequality holds strictly.
    pub margin: f64,
    pub holds: bool,
}

/// Draws a uniformly random student view at fraction `f` and compares the
/// closed-form bias with a teacher on all data (`f_t = 1`) against a teacher
/// on the student's own view (`f_t = f`). When `trials > 0` both sides are
/// also simulated.
pub fn verify_theorem(
    problem: &RegressionProblem,
    f: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<TheoremCheck> {
    check_alpha(alpha)?;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::input(format!("pruning fraction must lie in (0, 1], got {f}")));
    }
    let n = problem.num_samples();
    let d = problem.dim();
    if f * (n as f64) < d as f64 {
        return Err(Error::input(format!(
            "f·N = {} is below d = {d}; the pruned design would be rank deficient",
            f * n as f64
        )));
    }
    let student = problem.random_view(f, seed)?;
    let full = problem.full_view();
    let report = |teacher: &PrunedView| -> Result<BiasReport> {
        let closed = bias_closed_form(problem, &student, teacher, alpha)?;
        let mc = if trials > 0 {
            Some(bias_monte_carlo(problem, &student, teacher, alpha, trials, seed)?)
        } else {
            None
        };
        Ok(BiasReport {
            bias_closed_form: closed,
            bias_monte_carlo: mc,
            trials,
            alpha,
            f: student.fraction(),
            f_t: teacher.fraction(),
        })
    };
    let full_teacher = report(&full)?;
    let same_data_teacher = report(&student)?;
    let margin = same_data_teacher.bias_closed_form - full_teacher.bias_closed_form;
    Ok(TheoremCheck {
        holds: full_teacher.bias_closed_form <= same_data_teacher.bias_closed_form + THEOREM_SLACK,
        full_teacher,
        same_data_teacher,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_linear_regression, RegressionSpec};

    fn problem(d: usize, n: usize, lambda: f64, seed: u64) -> RegressionProblem {
        gen_linear_regression(&RegressionSpec {
            dim: d,
            samples: n,
            noise_std: 1.0,
            lambda,
            seed,
        })
        .unwrap()
    }

    // Literal double sum over (i, j) without the orthogonality shortcut.
    fn appendix_double_sum(theta: &DVector<f64>, s: &Spectrum, t: &Spectrum, alpha: f64, lambda: f64) -> f64 {
        let d = s.dim();
        (0..d)
            .map(|i| {
                let s2 = s.singular_values[i].powi(2);
                let inner: f64 = (0..d)
                    .map(|j| {
                        let uj = t.left_vectors.column(j);
                        let c = theta.dot(&uj) * uj.dot(&s.left_vectors.column(i));
                        c * (1.0 + alpha * s2 / (t.singular_values[j].powi(2) + lambda))
                    })
                    .sum();
                (lambda / (s2 + lambda)).powi(2) * inner * inner
            })
            .sum()
    }

    // Same-data reduction: Σ_i ⟨θ*,u_i⟩² (λ/(σ_i²+λ))² (1 + α σ_i²/(σ_i²+λ))².
    fn same_data_reduced(theta: &DVector<f64>, s: &Spectrum, alpha: f64, lambda: f64) -> f64 {
        (0..s.dim())
            .map(|i| {
                let s2 = s.singular_values[i].powi(2);
                let p = theta.dot(&s.left_vectors.column(i));
                p * p * (lambda / (s2 + lambda)).powi(2) * (1.0 + alpha * s2 / (s2 + lambda)).powi(2)
            })
            .sum()
    }

    #[test]
    fn matches_literal_double_sum() {
        let p = problem(6, 80, 1.0, 3);
        let student = p.random_view(0.3, 1).unwrap();
        let s = Spectrum::of(student.x_f()).unwrap();
        let t = Spectrum::of(p.x()).unwrap();
        for alpha in [0.0, 0.3, 1.0] {
            let got = bias_from_spectra(p.theta_star(), &s, &t, alpha, 1.0);
            let want = appendix_double_sum(p.theta_star(), &s, &t, alpha, 1.0);
            assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "{got} vs {want}");
        }
    }

    #[test]
    fn same_view_reduces_to_diagonal_form() {
        let p = problem(10, 200, 1.0, 4);
        let view = p.random_view(0.2, 2).unwrap();
        let s = Spectrum::of(view.x_f()).unwrap();
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            let got = bias_closed_form(&p, &view, &view, alpha).unwrap();
            let want = same_data_reduced(p.theta_star(), &s, alpha, 1.0);
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn vanishing_lambda_drives_bias_to_zero() {
        let base = problem(10, 200, 1.0, 5);
        let student_idx = base.random_view(0.3, 9).unwrap().indices().to_vec();
        let mut last = f64::INFINITY;
        for lambda in [1e-2, 1e-4, 1e-6] {
            let p = base.with_lambda(lambda).unwrap();
            let s = p.view(student_idx.clone()).unwrap();
            let b = bias_closed_form(&p, &s, &p.full_view(), 0.5).unwrap();
            assert!(b < last, "bias {b} did not decrease at lambda {lambda}");
            last = b;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn sign_flips_of_singular_vectors_do_not_matter() {
        let p = problem(5, 60, 1.0, 6);
        let view = p.random_view(0.4, 3).unwrap();
        let s = Spectrum::of(view.x_f()).unwrap();
        let t = Spectrum::of(p.x()).unwrap();
        let base = bias_from_spectra(p.theta_star(), &s, &t, 0.7, 1.0);
        for mask in 0u32..(1 << 5) {
            let mut s2 = s.clone();
            let mut t2 = t.clone();
            for k in 0..5 {
                if mask & (1 << k) != 0 {
                    s2.left_vectors.column_mut(k).neg_mut();
                }
                if mask & (1 << (4 - k)) != 0 {
                    t2.left_vectors.column_mut(k).neg_mut();
                }
            }
            let flipped = bias_from_spectra(p.theta_star(), &s2, &t2, 0.7, 1.0);
            assert!((flipped - base).abs() <= 1e-13 * base);
        }
    }

    #[test]
    fn rank_deficient_view_stays_finite() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]);
        let p = RegressionProblem::new(x, DVector::from_vec(vec![1.0, 0.0]), 1.0, 1.0).unwrap();
        let v = p.view(vec![0, 1]).unwrap();
        let b = bias_closed_form(&p, &v, &p.full_view(), 0.5).unwrap();
        assert!(b.is_finite() && b >= 0.0);
    }

    #[test]
    fn monte_carlo_noiseless_recovery() {
        let p = problem(4, 40, 1e-10, 7).with_noise_std(0.0).unwrap();
        let s = p.random_view(0.5, 1).unwrap();
        let b = bias_monte_carlo(&p, &s, &p.full_view(), 0.5, 10, 3).unwrap();
        assert!(b <= 1e-8, "{b}");
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let p = problem(4, 40, 1.0, 8);
        let s = p.random_view(0.5, 1).unwrap();
        let a = bias_monte_carlo(&p, &s, &p.full_view(), 0.5, 1, 11).unwrap();
        let b = bias_monte_carlo(&p, &s, &p.full_view(), 0.5, 1, 11).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let c = bias_monte_carlo(&p, &s, &p.full_view(), 0.5, 1, 12).unwrap();
        assert_ne!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn monte_carlo_rejects_zero_trials() {
        let p = problem(4, 40, 1.0, 8);
        let s = p.random_view(0.5, 1).unwrap();
        assert!(bias_monte_carlo(&p, &s, &p.full_view(), 0.5, 0, 1).is_err());
    }

    #[test]
    fn monte_carlo_tracks_closed_form_within_its_standard_error() {
        // d=10, N=200, N_f=40, λ=1, α=0.5, teacher on all data
        let p = problem(10, 200, 1.0, 2);
        let s = p.random_view(0.2, 5).unwrap();
        let full = p.full_view();
        let closed = bias_closed_form(&p, &s, &full, 0.5).unwrap();
        let mc = monte_carlo_summary(&p, &s, &full, 0.5, 100_000, 5).unwrap();
        let diff = (mc.bias() - mc.expected_offset() - closed).abs();
        assert!(diff <= 4.0 * mc.bias_std_error(), "closed {closed}, mc {}, se {}", mc.bias(), mc.bias_std_error());
    }

    #[test]
    fn theorem_alpha_zero_sides_equal() {
        let p = problem(10, 200, 1.0, 9);
        let check = verify_theorem(&p, 0.3, 0.0, 0, 4).unwrap();
        assert_eq!(check.margin, 0.0);
        assert!(check.holds);
    }

    #[test]
    fn theorem_full_fraction_sides_equal() {
        let p = problem(10, 200, 1.0, 9);
        let check = verify_theorem(&p, 1.0, 0.8, 0, 4).unwrap();
        assert_eq!(check.full_teacher.bias_closed_form, check.same_data_teacher.bias_closed_form);
        assert_eq!(check.full_teacher.f_t, 1.0);
    }

    #[test]
    fn theorem_holds_over_fifty_seeds() {
        for seed in 0..50 {
            let p = problem(10, 200, 1.0, seed);
            let check = verify_theorem(&p, 0.2, 1.0, 0, seed).unwrap();
            assert!(check.holds, "seed {seed}: margin {}", check.margin);
        }
    }

    #[test]
    fn theorem_rejects_infeasible_fraction() {
        let p = problem(10, 40, 1.0, 1);
        assert!(verify_theorem(&p, 0.2, 0.5, 0, 1).is_err());
        assert!(verify_theorem(&p, 0.0, 0.5, 0, 1).is_err());
        assert!(verify_theorem(&p, 1.2, 0.5, 0, 1).is_err());
    }

    #[test]
    fn grid_simulation_matches_separate_runs() {
        let p = problem(6, 80, 1.0, 21);
        let student = p.random_view(0.3, 2).unwrap();
        let full = p.full_view();
        let alphas = [0.0, 0.25, 1.0];
        let grid = monte_carlo_grid(&p, &student, &[&full, &student], &alphas, 3000, 5).unwrap();
        assert_eq!(grid.len(), 2);
        for (teacher, row) in [&full, &student].into_iter().zip(&grid) {
            for (&alpha, summary) in alphas.iter().zip(row) {
                let single = monte_carlo_summary(&p, &student, teacher, alpha, 3000, 5).unwrap();
                let rel = (summary.bias() - single.bias()).abs() / single.bias();
                assert!(rel < 1e-9, "alpha {alpha}: {} vs {}", summary.bias(), single.bias());
            }
        }
    }
}
