//! Grid verification of the teacher-size inequality and of the closed-form bias.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::store::write_file_atomic;
use crate::data::{gen_linear_regression, RegressionSpec};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::theory::{monte_carlo_grid, verify_theorem, MonteCarloSummary};

/// Grid of regression problems, kept fractions and KD weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryGrid {
    pub dim: usize,
    pub samples: usize,
    pub fractions: Vec<f64>,
    pub alphas: Vec<f64>,
    pub lambda: f64,
    pub noise_std: f64,
    /// Monte-Carlo label draws per cell; 0 skips the simulation cross-check.
    pub trials: usize,
    pub seeds: Vec<u64>,
    /// Largest accepted `|closed − simulated| / max(closed, 1e-6)`.
    pub rel_tolerance: f64,
}

impl Default for TheoryGrid {
    fn default() -> Self {
        Self {
            dim: 10,
            samples: 200,
            fractions: (1..=9).map(|k| k as f64 / 10.0).collect(),
            alphas: vec![0.25, 0.5, 1.0],
            lambda: 1.0,
            noise_std: 1.0,
            trials: 100_000,
            seeds: (0..50).collect(),
            rel_tolerance: 0.02,
        }
    }
}

impl TheoryGrid {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 || self.dim > self.samples {
            problems.push(format!("need 0 < dim <= samples, got dim={}, samples={}", self.dim, self.samples));
        }
        if self.fractions.is_empty() || self.alphas.is_empty() || self.seeds.is_empty() {
            problems.push("fractions, alphas and seeds must all be non-empty".to_string());
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                problems.push(format!("fraction {f} outside (0, 1]"));
            }
        }
        for &a in &self.alphas {
            if !(0.0..=1.0).contains(&a) {
                problems.push(format!("alpha {a} outside [0, 1]"));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            problems.push(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            problems.push(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.rel_tolerance.is_nan() || self.rel_tolerance < 0.0 {
            problems.push(format!("rel_tolerance must be >= 0, got {}", self.rel_tolerance));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Simulated bias for one teacher and its agreement with the closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationCheck {
    pub monte_carlo: f64,
    pub rel_err: f64,
    /// Delta-method standard error of the simulated value.
    pub std_error: f64,
    /// `(simulated − closed) / std_error`.
    pub z_score: f64,
    /// Expected upward offset of the simulated value from finite sampling.
    pub expected_offset: f64,
    pub agrees: bool,
}

impl SimulationCheck {
    fn new(closed: f64, summary: &MonteCarloSummary, rel_tolerance: f64) -> Self {
        let mc = summary.bias();
        let rel_err = (closed - mc).abs() / closed.max(1e-6);
        let std_error = summary.bias_std_error();
        Self {
            monte_carlo: mc,
            rel_err,
            std_error,
            z_score: if std_error > 0.0 { (mc - closed) / std_error } else { 0.0 },
            expected_offset: summary.expected_offset(),
            agrees: rel_err <= rel_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCell {
    pub seed: u64,
    pub f: f64,
    pub alpha: f64,
    pub kept: usize,
    /// Closed-form bias with a teacher fitted on all samples.
    pub bias_full_teacher: f64,
    /// Closed-form bias with a teacher fitted on the student's own samples.
    pub bias_same_teacher: f64,
    pub margin: f64,
    pub theorem_holds: bool,
    pub simulated_full_teacher: Option<SimulationCheck>,
    pub simulated_same_teacher: Option<SimulationCheck>,
}

impl TheoryCell {
    /// Both simulations agree with their closed forms (vacuously true without simulation).
    pub fn simulation_agrees(&self) -> bool {
        [&self.simulated_full_teacher, &self.simulated_same_teacher]
            .into_iter()
            .flatten()
            .all(|s| s.agrees)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub seed: u64,
    pub f: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub cells: usize,
    pub theorem_passes: usize,
    pub simulated_cells: usize,
    pub simulation_passes: usize,
    pub max_rel_err: f64,
    pub max_abs_z: f64,
    pub min_margin: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub grid: TheoryGrid,
    pub cells: Vec<TheoryCell>,
    pub skipped: Vec<SkippedPoint>,
    pub summary: TheorySummary,
}

impl TheoryReport {
    pub fn theorem_passed(&self) -> bool {
        self.summary.theorem_passes == self.summary.cells
    }

    pub fn simulation_passed(&self) -> bool {
        self.summary.simulation_passes == self.summary.simulated_cells
    }

    pub fn passed(&self) -> bool {
        self.theorem_passed() && self.simulation_passed()
    }
}

/// Runs the inequality check (and, with `trials > 0`, the simulation
/// cross-check for both teachers) at every `(seed, f, α)`.
///
/// Points with `f·N < d` are skipped and logged. The simulation for one
/// `(seed, f)` shares its label draws across all α and both teachers.
pub fn run_theory_suite(grid: &TheoryGrid) -> Result<TheoryReport> {
    grid.validate()?;
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &seed in &grid.seeds {
        let problem = gen_linear_regression(&RegressionSpec {
            dim: grid.dim,
            samples: grid.samples,
            noise_std: grid.noise_std,
            lambda: grid.lambda,
            seed,
        })?;
        for (fi, &f) in grid.fractions.iter().enumerate() {
            if f * (grid.samples as f64) < grid.dim as f64 {
                let reason = format!("f·N = {} < d = {}", f * grid.samples as f64, grid.dim);
                log::warn!("skipping seed {seed}, f={f}: {reason}");
                skipped.push(SkippedPoint { seed, f, reason });
                continue;
            }
            let checks = grid
                .alphas
                .iter()
                .map(|&alpha| verify_theorem(&problem, f, alpha, 0, seed))
                .collect::<Result<Vec<_>>>()?;
            let simulated = if grid.trials > 0 {
                let student = problem.random_view(f, seed)?;
                let full = problem.full_view();
                let mc_seed = derive_seed(seed, fi as u64);
                Some(monte_carlo_grid(&problem, &student, &[&full, &student], &grid.alphas, grid.trials, mc_seed)?)
            } else {
                None
            };
            for (ai, (&alpha, check)) in grid.alphas.iter().zip(checks).enumerate() {
                let full_closed = check.full_teacher.bias_closed_form;
                let same_closed = check.same_data_teacher.bias_closed_form;
                let (sim_full, sim_same) = match &simulated {
                    Some(sim) => (
                        Some(SimulationCheck::new(full_closed, &sim[0][ai], grid.rel_tolerance)),
                        Some(SimulationCheck::new(same_closed, &sim[1][ai], grid.rel_tolerance)),
                    ),
                    None => (None, None),
                };
                cells.push(TheoryCell {
                    seed,
                    f,
                    alpha,
                    kept: crate::pruning::kept_count(f, grid.samples)?,
                    bias_full_teacher: full_closed,
                    bias_same_teacher: same_closed,
                    margin: check.margin,
                    theorem_holds: check.holds,
                    simulated_full_teacher: sim_full,
                    simulated_same_teacher: sim_same,
                });
            }
        }
        log::info!("theory suite: seed {seed} done");
    }
    let summary = summarize(&cells, skipped.len());
    Ok(TheoryReport {
        grid: grid.clone(),
        cells,
        skipped,
        summary,
    })
}

fn summarize(cells: &[TheoryCell], skipped: usize) -> TheorySummary {
    let sims = || {
        cells
            .iter()
            .flat_map(|c| [&c.simulated_full_teacher, &c.simulated_same_teacher])
            .flatten()
    };
    TheorySummary {
        cells: cells.len(),
        theorem_passes: cells.iter().filter(|c| c.theorem_holds).count(),
        simulated_cells: cells.iter().filter(|c| c.simulated_full_teacher.is_some()).count(),
        simulation_passes: cells
            .iter()
            .filter(|c| c.simulated_full_teacher.is_some() && c.simulation_agrees())
            .count(),
        max_rel_err: sims().map(|s| s.rel_err).fold(0.0, f64::max),
        max_abs_z: sims().map(|s| s.z_score.abs()).fold(0.0, f64::max),
        min_margin: cells.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min),
        skipped,
    }
}

/// Per-cell CSV: closed forms, margin and (when simulated) both cross-checks.
pub fn theory_cells_csv(report: &TheoryReport) -> String {
    let mut out = String::from(
        "seed,f,alpha,kept,bias_full_teacher,bias_same_teacher,margin,theorem_holds,\
         mc_full_teacher,rel_err_full_teacher,z_full_teacher,mc_same_teacher,rel_err_same_teacher,z_same_teacher\n",
    );
    let sim = |s: &Option<SimulationCheck>| match s {
        Some(s) => format!("{},{},{}", s.monte_carlo, s.rel_err, s.z_score),
        None => ",,".to_string(),
    };
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.seed,
            c.f,
            c.alpha,
            c.kept,
            c.bias_full_teacher,
            c.bias_same_teacher,
            c.margin,
            c.theorem_holds,
            sim(&c.simulated_full_teacher),
            sim(&c.simulated_same_teacher),
        ));
    }
    out
}

/// Writes `theory_report.json` and `theory_cells.csv` into `dir`.
pub fn emit_theory_report(report: &TheoryReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("theory_report.json");
    write_file_atomic(&json, &(serde_json::to_string_pretty(report)? + "\n"))?;
    let csv = dir.join("theory_cells.csv");
    write_file_atomic(&csv, &theory_cells_csv(report))?;
    Ok(vec![json, csv])
}
