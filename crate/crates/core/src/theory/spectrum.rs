use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Singular values (descending) and the matching left singular vectors of a
/// `d × N_f` design with `d ≤ N_f`. `left_vectors` is square and orthogonal.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub singular_values: DVector<f64>,
    pub left_vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(x: &DMatrix<f64>) -> Result<Self> {
        let (d, n) = x.shape();
        if d == 0 || d > n {
            return Err(Error::input(format!("spectrum needs 0 < d <= N_f, got {d}x{n}")));
        }
        let svd = x.clone().svd(true, false);
        let u = svd.u.ok_or_else(|| Error::input("SVD did not produce left singular vectors"))?;
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let singular_values = DVector::from_iterator(d, order.iter().map(|&k| svd.singular_values[k]));
        let left_vectors = u.select_columns(order.iter());
        Ok(Self {
            singular_values,
            left_vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.singular_values.len()
    }

    /// True when the smallest singular value is below `RANK_TOLERANCE · σ₁`.
    pub fn is_rank_deficient(&self) -> bool {
        let top = self.singular_values[0];
        let last = self.singular_values[self.dim() - 1];
        top == 0.0 || last < RANK_TOLERANCE * top
    }
}

/// Per-index comparison `σ_k(X) − σ_k(X_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dominance {
    pub holds: bool,
    pub margins: Vec<f64>,
    pub tolerance: f64,
}

/// Checks that every singular value of `x` is at least the matching singular
/// value of a column subset `x_f`, up to `1e-10 · σ₁(x)`.
pub fn singular_value_dominance(x: &DMatrix<f64>, x_f: &DMatrix<f64>) -> Result<Dominance> {
    if x.nrows() != x_f.nrows() {
        return Err(Error::input(format!(
            "row counts differ: {} vs {}",
            x.nrows(),
            x_f.nrows()
        )));
    }
    check_column_subset(x, x_f)?;
    let full = Spectrum::of(x)?;
    let sub = Spectrum::of(x_f)?;
    let tolerance = 1e-10 * full.singular_values[0];
    let margins: Vec<f64> = full
        .singular_values
        .iter()
        .zip(sub.singular_values.iter())
        .map(|(a, b)| a - b)
        .collect();
    let holds = margins.iter().all(|&m| m >= -tolerance);
    Ok(Dominance {
        holds,
        margins,
        tolerance,
    })
}

fn column_key(col: nalgebra::DVectorView<'_, f64>) -> Vec<u64> {
    col.iter().map(|v| v.to_bits()).collect()
}

fn check_column_subset(x: &DMatrix<f64>, x_f: &DMatrix<f64>) -> Result<()> {
    let mut available: HashMap<Vec<u64>, usize> = HashMap::new();
    for j in 0..x.ncols() {
        *available.entry(column_key(x.column(j))).or_default() += 1;
    }
    for j in 0..x_f.ncols() {
        match available.get_mut(&column_key(x_f.column(j))) {
            Some(count) if *count > 0 => *count -= 1,
            _ => {
                return Err(Error::input(format!(
                    "column {j} of the pruned matrix is not a column of the full matrix"
                )))
            }
        }
    }
    Ok(())
}
