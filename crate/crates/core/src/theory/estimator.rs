use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge regression on a fixed design, factorised once.
///
/// Solves `(X_f X_fᵀ + λI) θ = X_f y` through a Cholesky factor of the
/// regularised Gram matrix, which is symmetric positive definite for `λ > 0`.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    dim: usize,
    samples: usize,
    // column-major d × N_f, so each sample's features are contiguous
    design: Vec<f64>,
    // lower-triangular factor, row-major d × d
    factor: Vec<f64>,
}

impl RidgeSolver {
    pub fn new(x_f: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be finite and > 0, got {lambda}")));
        }
        if x_f.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("design contains non-finite entries"));
        }
        let (dim, samples) = x_f.shape();
        if dim == 0 {
            return Err(Error::input("design has no rows"));
        }
        let mut gram = x_f * x_f.transpose();
        for i in 0..dim {
            gram[(i, i)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::input("regularised Gram matrix is not positive definite"))?;
        let l = chol.l();
        let mut factor = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                factor[i * dim + j] = l[(i, j)];
            }
        }
        Ok(Self {
            dim,
            samples,
            design: x_f.as_slice().to_vec(),
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn fit(&self, y_f: &DVector<f64>) -> Result<DVector<f64>> {
        if y_f.len() != self.samples {
            return Err(Error::input(format!(
                "label vector has length {}, design has {} columns",
                y_f.len(),
                self.samples
            )));
        }
        if y_f.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("labels contain non-finite entries"));
        }
        let mut out = vec![0.0; self.dim];
        self.fit_into(y_f.as_slice(), &mut out);
        Ok(DVector::from_vec(out))
    }

    /// Unchecked hot-path variant: `y_f.len() == samples`, `out.len() == dim`.
    pub fn fit_into(&self, y_f: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (col, &y) in self.design.chunks_exact(d).zip(y_f) {
            for (o, &x) in out.iter_mut().zip(col) {
                *o += x * y;
            }
        }
        self.solve_in_place(out);
    }

    /// `X_fᵀ θ` into `out` (length `samples`).
    pub fn predict_into(&self, theta: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(self.design.chunks_exact(self.dim)) {
            *o = col.iter().zip(theta).map(|(x, t)| x * t).sum();
        }
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let d = self.dim;
        let l = &self.factor;
        for i in 0..d {
            let mut s = b[i];
            for j in 0..i {
                s -= l[i * d + j] * b[j];
            }
            b[i] = s / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = b[i];
            for j in i + 1..d {
                s -= l[j * d + i] * b[j];
            }
            b[i] = s / l[i * d + i];
        }
    }
}

/// `(X_f X_fᵀ + λI)⁻¹ X_f y_f`.
pub fn ridge_fit(x_f: &DMatrix<f64>, y_f: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    RidgeSolver::new(x_f, lambda)?.fit(y_f)
}

/// Student estimator distilled from a linear teacher:
/// `(X_f X_fᵀ + λI)⁻¹ X_f ((1−α) y_f + α X_fᵀ θ_teacher)`.
pub fn sd_student_fit(
    x_f: &DMatrix<f64>,
    y_f: &DVector<f64>,
    theta_teacher: &DVector<f64>,
    alpha: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    if theta_teacher.len() != x_f.nrows() {
        return Err(Error::input(format!(
            "teacher has {} parameters, design has d={}",
            theta_teacher.len(),
            x_f.nrows()
        )));
    }
    if theta_teacher.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("teacher parameters contain non-finite entries"));
    }
    let solver = RidgeSolver::new(x_f, lambda)?;
    if alpha == 0.0 {
        return solver.fit(y_f);
    }
    if y_f.len() != x_f.ncols() {
        return Err(Error::input(format!(
            "label vector has length {}, design has {} columns",
            y_f.len(),
            x_f.ncols()
        )));
    }
    let pseudo = x_f.tr_mul(theta_teacher);
    let target = y_f * (1.0 - alpha) + pseudo * alpha;
    solver.fit(&target)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::input(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    // Independent route: normal equations solved with LU on an explicitly assembled system.
    fn normal_equations_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let d = x.nrows();
        let mut a = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = (0..x.ncols()).map(|k| x[(i, k)] * x[(j, k)]).sum::<f64>();
            }
            a[(i, i)] += lambda;
        }
        let b = DVector::from_fn(d, |i, _| (0..x.ncols()).map(|k| x[(i, k)] * y[k]).sum::<f64>());
        a.lu().solve(&b).unwrap()
    }

    fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identity_design_recovers_labels_as_lambda_vanishes() {
        let x = DMatrix::<f64>::identity(3, 3);
        let theta = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let fit = ridge_fit(&x, &theta, 1e-12).unwrap();
        assert!(rel_err(&fit, &theta) < 1e-10);
    }

    #[test]
    fn zero_labels_give_zero_fit() {
        let x = gaussian(4, 9, 1);
        let fit = ridge_fit(&x, &DVector::zeros(9), 0.5).unwrap();
        assert!(fit.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let x = gaussian(3, 10, 2);
        let y = gaussian(10, 1, 3).column(0).into_owned();
        let fit = ridge_fit(&x, &y, 1.0).unwrap();
        let oracle = normal_equations_oracle(&x, &y, 1.0);
        assert!(rel_err(&fit, &oracle) <= 1e-10, "{}", rel_err(&fit, &oracle));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = gaussian(3, 10, 2);
        assert!(ridge_fit(&x, &DVector::zeros(9), 1.0).is_err());
        assert!(ridge_fit(&x, &DVector::zeros(10), 0.0).is_err());
        let mut y = DVector::zeros(10);
        y[3] = f64::NAN;
        assert!(ridge_fit(&x, &y, 1.0).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::INFINITY;
        assert!(ridge_fit(&bad, &DVector::zeros(10), 1.0).is_err());
    }

    #[test]
    fn student_alpha_zero_is_ridge() {
        let x = gaussian(5, 12, 4);
        let y = gaussian(12, 1, 5).column(0).into_owned();
        let teacher = gaussian(5, 1, 6).column(0).into_owned();
        let s = sd_student_fit(&x, &y, &teacher, 0.0, 0.7).unwrap();
        let r = ridge_fit(&x, &y, 0.7).unwrap();
        assert!(rel_err(&s, &r) <= 1e-12);
    }

    #[test]
    fn student_alpha_one_zero_teacher_is_zero() {
        let x = gaussian(5, 12, 4);
        let y = gaussian(12, 1, 5).column(0).into_owned();
        let s = sd_student_fit(&x, &y, &DVector::zeros(5), 1.0, 0.7).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn student_matches_term_by_term_oracle() {
        // d=4, N=100 full data for the teacher, N_f=20 columns for the student
        let x = gaussian(4, 100, 7);
        let y = gaussian(100, 1, 8).column(0).into_owned();
        let lambda = 1.0;
        let alpha = 0.5;
        let teacher = ridge_fit(&x, &y, lambda).unwrap();
        let cols: Vec<usize> = (0..100).step_by(5).collect();
        let x_f = x.select_columns(cols.iter());
        let y_f = DVector::from_iterator(cols.len(), cols.iter().map(|&i| y[i]));
        let s = sd_student_fit(&x_f, &y_f, &teacher, alpha, lambda).unwrap();

        let teacher_oracle = normal_equations_oracle(&x, &y, lambda);
        let inv = {
            let mut g = &x_f * x_f.transpose();
            for i in 0..4 {
                g[(i, i)] += lambda;
            }
            g.try_inverse().unwrap()
        };
        let hard = &inv * &x_f * &y_f;
        let soft = &inv * &x_f * (x_f.transpose() * &teacher_oracle);
        let oracle = hard * (1.0 - alpha) + soft * alpha;
        assert!(rel_err(&s, &oracle) <= 1e-10, "{}", rel_err(&s, &oracle));
    }

    #[test]
    fn student_rejects_alpha_out_of_range() {
        let x = gaussian(2, 4, 1);
        let y = DVector::zeros(4);
        assert!(sd_student_fit(&x, &y, &DVector::zeros(2), 1.5, 1.0).is_err());
        assert!(sd_student_fit(&x, &y, &DVector::zeros(2), -0.1, 1.0).is_err());
        assert!(sd_student_fit(&x, &y, &DVector::zeros(3), 0.5, 1.0).is_err());
    }
}
