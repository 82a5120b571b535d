//! Exit codes and outputs of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"
seeds = [0]

[dataset]
label_noise = 0.1

[dataset.source]
kind = "mixture"
num_classes = 4
dim = 3
train_per_class = 10
test_per_class = 4
spread = 0.3
seed = 2

[teacher]
hidden = [6]

[student]
hidden = [3]

[pruning]
methods = ["random", "forgetting"]
fractions = [0.5]
ensemble_size = 2

[distill]
alphas = [0.5]

[train]
epochs = 2
lr_decay_epochs = [1]
batch_size = 8

[capacity]
teacher_widths = [2, 6]
"#;

fn kd_prune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kd-prune"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn print_defaults_emits_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = kd_prune(&["--print-defaults"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg = write_config(dir.path(), &stdout(&out));
    let check = kd_prune(&["--config", &cfg, "validate"]);
    assert_eq!(check.status.code(), Some(0), "{}", stderr(&check));
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seeds = []\n[pruning]\nfractions = [1.5]\n[distill]\ntau = -1.0\n",
    );
    let out = kd_prune(&["--config", &cfg, "validate"]);
    assert_eq!(out.status.code(), Some(1));
    let problems = stderr(&out).lines().filter(|l| l.trim_start().starts_with("- ")).count();
    assert!(problems >= 3, "{}", stderr(&out));
}

#[test]
fn unknown_config_fields_and_flags_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "no_such_field = 1\n");
    assert_eq!(kd_prune(&["--config", &cfg, "validate"]).status.code(), Some(1));
    assert_eq!(kd_prune(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(kd_prune(&[]).status.code(), Some(1));
}

#[test]
fn help_succeeds() {
    assert_eq!(kd_prune(&["--help"]).status.code(), Some(0));
}

#[test]
fn small_theory_run_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = kd_prune(&[
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "3",
        "theory",
        "--dim",
        "3",
        "--samples",
        "20",
        "--fractions",
        "0.5,1.0",
        "--trials",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("theorem inequality: 6/6"));
    assert!(out_dir.join("reports/theory/theory_report.json").exists());
    assert!(out_dir.join("reports/theory/theory_cells.csv").exists());
}

#[test]
fn failed_theory_check_exits_with_acceptance_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[theory]\nrel_tolerance = 0.0\n");
    let out = kd_prune(&[
        "--config",
        &cfg,
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "theory",
        "--dim",
        "3",
        "--samples",
        "20",
        "--fractions",
        "0.5",
        "--alphas",
        "0.5",
        "--num-seeds",
        "1",
        "--trials",
        "200",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn report_without_records_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kd_prune(&["--out", dir.path().to_str().unwrap(), "report"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_commands_run_and_report_rebuilds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_CONFIG);
    let out_dir = dir.path().join("out");
    let base = ["--config", cfg.as_str(), "--out", out_dir.to_str().unwrap()];
    let stages: [&[&str]; 9] = [
        &["gen-data"],
        &["train-teacher"],
        &["score", "--method", "forgetting"],
        &["prune", "--method", "random", "--fraction", "0.5"],
        &["distill", "--method", "forgetting", "--fraction", "0.5"],
        &["run"],
        &["report"],
        &["capacity"],
        &["report", "--kind", "capacity"],
    ];
    for stage in stages {
        let args: Vec<&str> = base.iter().chain(stage).copied().collect();
        let out = kd_prune(&args);
        assert_eq!(out.status.code(), Some(0), "{stage:?}: {}", stderr(&out));
    }
    let records = fs::read_to_string(out_dir.join("reports/pipeline/records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2);
    let capacity = fs::read_to_string(out_dir.join("reports/capacity/records.csv")).unwrap();
    assert_eq!(capacity.lines().count(), 1 + 2);
}
