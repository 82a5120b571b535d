//! Command-line front end: each subcommand runs one stage or a whole pipeline.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::pipeline::{report_dir, run_capacity_sweep, run_pipeline, Experiment};
use super::report::{emit_report, load_records_csv, ExperimentReport, ReportKind};
use super::spec::ExperimentSpec;
use super::theory_suite::{emit_theory_report, run_theory_suite};
use crate::error::{Error, Result};
use crate::nn::accuracy;
use crate::pruning::ScoreMethod;

/// Exit status for a successful command.
pub const EXIT_OK: i32 = 0;
/// Invalid configuration or arguments.
pub const EXIT_VALIDATION: i32 = 1;
/// Failure while running.
pub const EXIT_RUNTIME: i32 = 2;
/// The theory suite ran but some check failed.
pub const EXIT_ACCEPTANCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kd-prune", version, about = "Knowledge distillation on pruned training sets")]
pub struct Cli {
    /// Experiment config (TOML); unspecified fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (artifact store root).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the default config as TOML and exit.
    #[arg(long)]
    pub print_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or load) the dataset, apply label noise and store it.
    GenData(Overrides),
    /// Train the teacher on the full training set.
    TrainTeacher(Overrides),
    /// Compute importance scores.
    Score {
        #[arg(long)]
        method: ScoreMethod,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Select the kept subset at one fraction.
    Prune {
        #[arg(long)]
        method: ScoreMethod,
        #[arg(long)]
        fraction: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train students with and without the teacher on one pruned subset.
    Distill {
        #[arg(long)]
        method: ScoreMethod,
        #[arg(long)]
        fraction: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full grid: teacher, scores, pruning, students, report.
    Run(Overrides),
    /// Theorem and bias-formula checks over the regression grid.
    Theory(TheoryOverrides),
    /// Compare teachers of several widths.
    Capacity(Overrides),
    /// Rebuild aggregates and plot data from a stored records file.
    Report {
        #[arg(long, value_enum, default_value_t = KindArg::Pipeline)]
        kind: KindArg,
    },
    /// Check a config and list every problem.
    Validate(Overrides),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Pipeline,
    Capacity,
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Fraction of training labels flipped to a wrong class.
    #[arg(long)]
    pub label_noise: Option<f64>,
    /// Pruning methods (comma separated: random, forgetting, el2n, grand).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<ScoreMethod>>,
    /// Kept fractions (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Explicit KD weights (comma separated); replaces any policy.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Softmax temperature for distillation.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Training epochs; learning-rate decay moves to 50% and 75% of the run.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Teacher hidden widths (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub teacher_hidden: Option<Vec<usize>>,
    /// Student hidden widths (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub student_hidden: Option<Vec<usize>>,
    /// Models in the EL2N/GraNd ensemble.
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    /// Teacher widths for the capacity sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub teacher_widths: Option<Vec<usize>>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(v) = self.label_noise {
            spec.dataset.label_noise = v;
        }
        if let Some(v) = &self.methods {
            spec.pruning.methods = v.clone();
        }
        if let Some(v) = &self.fractions {
            spec.pruning.fractions = v.clone();
        }
        if let Some(v) = &self.alphas {
            spec.distill.alphas = v.clone();
            spec.distill.policy = None;
        }
        if let Some(v) = self.tau {
            spec.distill.tau = v;
        }
        if let Some(epochs) = self.epochs {
            spec.train.epochs = epochs;
            let mut decay: Vec<usize> = [epochs / 2, epochs * 3 / 4].into_iter().filter(|&e| e > 0).collect();
            decay.dedup();
            spec.train.lr_decay_epochs = decay;
        }
        if let Some(v) = &self.teacher_hidden {
            spec.teacher.hidden = v.clone();
        }
        if let Some(v) = &self.student_hidden {
            spec.student.hidden = v.clone();
        }
        if let Some(v) = self.ensemble_size {
            spec.pruning.ensemble_size = v;
        }
        if let Some(v) = &self.teacher_widths {
            spec.capacity.teacher_widths = v.clone();
        }
    }
}

/// Command-line overrides of the theory grid.
#[derive(Debug, Clone, Default, Args)]
pub struct TheoryOverrides {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Monte-Carlo draws per cell (0 disables the simulation cross-check).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Use seeds `0..n`.
    #[arg(long)]
    pub num_seeds: Option<u64>,
}

impl TheoryOverrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        let g = &mut spec.theory;
        if let Some(v) = self.dim {
            g.dim = v;
        }
        if let Some(v) = self.samples {
            g.samples = v;
        }
        if let Some(v) = &self.fractions {
            g.fractions = v.clone();
        }
        if let Some(v) = &self.alphas {
            g.alphas = v.clone();
        }
        if let Some(v) = self.lambda {
            g.lambda = v;
        }
        if let Some(v) = self.noise_std {
            g.noise_std = v;
        }
        if let Some(v) = self.trials {
            g.trials = v;
        }
        if let Some(n) = self.num_seeds {
            g.seeds = (0..n).collect();
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Validation(problems) = &e {
                for p in problems {
                    eprintln!("  - {p}");
                }
            }
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Serde(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// Builds the effective spec: defaults, then config file, then flags.
pub fn resolve_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    match &cli.command {
        Some(
            Command::GenData(o)
            | Command::TrainTeacher(o)
            | Command::Run(o)
            | Command::Capacity(o)
            | Command::Validate(o),
        ) => o.apply(&mut spec),
        Some(Command::Score { overrides, .. } | Command::Prune { overrides, .. } | Command::Distill { overrides, .. }) => {
            overrides.apply(&mut spec)
        }
        Some(Command::Theory(t)) => t.apply(&mut spec),
        Some(Command::Report { .. }) | None => {}
    }
    if let Some(seed) = cli.seed {
        spec.seeds = vec![seed];
        spec.theory.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        spec.out = out.clone();
    }
    Ok(spec)
}

/// Runs the parsed command; returns the exit code for completed commands.
pub fn execute(cli: &Cli) -> Result<i32> {
    if cli.print_defaults {
        print!("{}", ExperimentSpec::default().to_toml());
        return Ok(EXIT_OK);
    }
    let Some(command) = &cli.command else {
        return Err(Error::Validation(vec![
            "no subcommand given (see --help)".to_string(),
        ]));
    };
    let spec = resolve_spec(cli)?;
    match command {
        Command::Validate(_) => {
            spec.validate()?;
            println!("config is valid");
        }
        Command::GenData(_) => {
            let exp = Experiment::prepare(&spec)?;
            println!(
                "dataset {}: {} train / {} test samples, {} classes, stored under {}",
                exp.dataset_hash(),
                exp.train_set().len(),
                exp.test_set().len(),
                exp.train_set().num_classes(),
                exp.store().root().join("data").display()
            );
        }
        Command::TrainTeacher(_) => {
            let exp = Experiment::prepare(&spec)?;
            for &seed in &spec.seeds {
                let teacher = exp.teacher(seed, &spec.teacher)?;
                let acc = accuracy(&teacher.model.value, exp.test_set())?;
                println!("seed {seed}: teacher test accuracy {acc:.4} -> {}", teacher.model.path.display());
            }
        }
        Command::Score { method, .. } => {
            let exp = Experiment::prepare(&spec)?;
            for &seed in &spec.seeds {
                match exp.scores(*method, seed)? {
                    Some(scores) => println!("seed {seed}: {} scores -> {}", method, scores.path.display()),
                    None => println!("seed {seed}: {method} pruning uses no scores"),
                }
            }
        }
        Command::Prune { method, fraction, .. } => {
            let exp = Experiment::prepare(&spec)?;
            for &seed in &spec.seeds {
                let scores = exp.scores(*method, seed)?;
                let prune = exp.prune(*method, *fraction, seed, scores.as_ref())?;
                println!(
                    "seed {seed}: kept {} of {} -> {}",
                    prune.value.kept_ids.len(),
                    exp.train_set().len(),
                    prune.path.display()
                );
            }
        }
        Command::Distill { method, fraction, .. } => {
            let exp = Experiment::prepare(&spec)?;
            for &seed in &spec.seeds {
                let teacher = exp.teacher(seed, &spec.teacher)?;
                let cache = exp.cache(&teacher)?;
                let scores = exp.scores(*method, seed)?;
                let prune = exp.prune(*method, *fraction, seed, scores.as_ref())?;
                let baseline = exp.student(seed, &prune, None)?;
                let base_acc = accuracy(&baseline.value, exp.test_set())?;
                for (alpha, _) in spec.distill.alphas_at(*fraction)? {
                    let student = exp.student(seed, &prune, Some((&cache, alpha)))?;
                    let acc = accuracy(&student.value, exp.test_set())?;
                    println!("seed {seed}: alpha={alpha} kd {acc:.4} vs no-kd {base_acc:.4}");
                }
            }
        }
        Command::Run(_) => {
            let report = run_pipeline(&spec)?;
            print_report(&report, &report_dir(&spec.out, ReportKind::Pipeline));
        }
        Command::Capacity(_) => {
            let report = run_capacity_sweep(&spec)?;
            print_report(&report, &report_dir(&spec.out, ReportKind::Capacity));
        }
        Command::Report { kind } => {
            let kind = match kind {
                KindArg::Pipeline => ReportKind::Pipeline,
                KindArg::Capacity => ReportKind::Capacity,
            };
            let dir = report_dir(&spec.out, kind);
            let records = load_records_csv(&dir.join("records.csv"))?;
            let report = ExperimentReport::from_records(kind, spec.student.width(), records);
            emit_report(&report, &dir)?;
            print_report(&report, &dir);
        }
        Command::Theory(_) => {
            spec.theory.validate()?;
            let report = run_theory_suite(&spec.theory)?;
            let dir = spec.out.join("reports").join("theory");
            let paths = emit_theory_report(&report, &dir)?;
            let s = &report.summary;
            println!(
                "theorem inequality: {}/{} cells (min margin {:e})",
                s.theorem_passes, s.cells, s.min_margin
            );
            if s.simulated_cells > 0 {
                println!(
                    "simulation agreement: {}/{} cells (max rel err {:.4}, max |z| {:.2})",
                    s.simulation_passes, s.simulated_cells, s.max_rel_err, s.max_abs_z
                );
            }
            for p in paths {
                println!("wrote {}", p.display());
            }
            if !report.passed() {
                return Ok(EXIT_ACCEPTANCE);
            }
        }
    }
    Ok(EXIT_OK)
}

fn print_report(report: &ExperimentReport, dir: &std::path::Path) {
    println!("method     width  f      alpha   runs  kd_mean  kd_std   nokd_mean nokd_std teacher");
    for a in &report.aggregates {
        println!(
            "{:<10} {:<6} {:<6} {:<7} {:<5} {:.4}   {:.4}   {:.4}    {:.4}   {:.4}",
            a.cell.method.name(),
            a.cell.teacher_width,
            a.cell.f,
            a.cell.alpha,
            a.runs,
            a.kd_mean,
            a.kd_std,
            a.baseline_mean,
            a.baseline_std,
            a.teacher_mean
        );
    }
    for t in &report.trends {
        println!("[{}] {}: {}", if t.passed { "pass" } else { "FAIL" }, t.name, t.detail);
    }
    println!("reports in {}", dir.display());
}
