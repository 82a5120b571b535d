//! Ridge self-distillation on pruned designs.
//!
//! A design matrix `X` is `d × N` with samples as columns and labels follow
//! `y = Xᵀθ* + η`. A pruned view keeps `N_f` of those columns. The student is
//! a ridge fit on the view against a mixture of the observed labels and a
//! teacher's predictions; this module evaluates its bias both in closed form
//! (from the SVDs of the student and teacher views) and by simulation.

mod bias;
mod estimator;
mod spectrum;

pub use bias::{
    bias_closed_form, bias_from_spectra, bias_monte_carlo, monte_carlo_grid, monte_carlo_summary, verify_theorem,
    BiasReport, MonteCarloSummary, TheoremCheck, THEOREM_SLACK,
};
pub use estimator::{ridge_fit, sd_student_fit, RidgeSolver};
pub use spectrum::{singular_value_dominance, Dominance, Spectrum, RANK_TOLERANCE};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pruning::kept_count;
use crate::rng::{stream, substream};

/// Ground-truth linear model used by the theory suite.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    x: DMatrix<f64>,
    theta_star: DVector<f64>,
    noise_std: f64,
    lambda: f64,
}

impl RegressionProblem {
    pub fn new(x: DMatrix<f64>, theta_star: DVector<f64>, noise_std: f64, lambda: f64) -> Result<Self> {
        let (d, n) = x.shape();
        if d == 0 || d > n {
            return Err(Error::input(format!("design must satisfy 0 < d <= N, got d={d}, N={n}")));
        }
        if theta_star.len() != d {
            return Err(Error::input(format!(
                "theta_star has length {}, design has d={d}",
                theta_star.len()
            )));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::input(format!("noise_std must be finite and >= 0, got {noise_std}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be finite and > 0, got {lambda}")));
        }
        if x.iter().chain(theta_star.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("design and theta_star must be finite"));
        }
        Ok(Self {
            x,
            theta_star,
            noise_std,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same design and ground truth with a different regulariser.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.theta_star.clone(), self.noise_std, lambda)
    }

    pub fn with_noise_std(&self, noise_std: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.theta_star.clone(), noise_std, self.lambda)
    }

    /// `Xᵀθ*`.
    pub fn noiseless_labels(&self) -> DVector<f64> {
        self.x.tr_mul(&self.theta_star)
    }

    /// One draw of `y = Xᵀθ* + η` with i.i.d. Gaussian `η`.
    pub fn draw_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut y = self.noiseless_labels();
        if self.noise_std > 0.0 {
            for v in y.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.noise_std * z;
            }
        }
        y
    }

    pub fn labels_for_seed(&self, seed: u64) -> DVector<f64> {
        self.draw_labels(&mut substream(seed, stream::REGRESSION_NOISE))
    }

    pub fn full_view(&self) -> PrunedView {
        PrunedView {
            indices: (0..self.num_samples()).collect(),
            x_f: self.x.clone(),
            fraction: 1.0,
        }
    }

    pub fn view(&self, indices: Vec<usize>) -> Result<PrunedView> {
        PrunedView::new(&self.x, indices)
    }

    /// Uniformly random column subset of size `round(f·N)`, indices ascending.
    pub fn random_view(&self, f: f64, seed: u64) -> Result<PrunedView> {
        let n = self.num_samples();
        let n_f = kept_count(f, n)?;
        let mut rng = substream(seed, stream::THEORY_VIEW);
        let mut indices = rand::seq::index::sample(&mut rng, n, n_f).into_vec();
        indices.sort_unstable();
        self.view(indices)
    }
}

/// Selected columns of a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedView {
    indices: Vec<usize>,
    x_f: DMatrix<f64>,
    fraction: f64,
}

impl PrunedView {
    pub fn new(x: &DMatrix<f64>, indices: Vec<usize>) -> Result<Self> {
        let (d, n) = x.shape();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::input(format!("column index {i} out of range for N={n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::input(format!("column index {i} selected twice")));
            }
        }
        if indices.len() < d {
            return Err(Error::input(format!(
                "pruned view keeps {} columns but needs at least d={d}",
                indices.len()
            )));
        }
        let x_f = x.select_columns(indices.iter());
        let fraction = indices.len() as f64 / n as f64;
        Ok(Self {
            indices,
            x_f,
            fraction,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn x_f(&self) -> &DMatrix<f64> {
        &self.x_f
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Entries of a full-length label vector at this view's columns.
    pub fn select(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| y[i]))
    }
}
