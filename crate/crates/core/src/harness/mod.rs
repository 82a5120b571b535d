//! Experiment orchestration: configuration, the artifact store, end-to-end
//! pipelines, the theory suite, report emission and the command line.

pub mod cli;
pub mod pipeline;
pub mod report;
pub mod spec;
pub mod store;
pub mod theory_suite;

pub use pipeline::{report_dir, run_capacity_sweep, run_pipeline, Experiment, TrainedModel};
pub use report::{
    aggregate, emit_report, load_records_csv, mean_std, plot_csv, records_from_csv, records_to_csv, Aggregate,
    CellKey, ExperimentReport, ReportKind, RunRecord, TrendFlag,
};
pub use spec::{AlphaSource, ArchSpec, CapacitySpec, CsvSource, DataSource, DatasetSpec, DistillSpec, ExperimentSpec, PruningSpec};
pub use store::{ArtifactKind, ArtifactStore, Stored};
pub use theory_suite::{emit_theory_report, run_theory_suite, SimulationCheck, TheoryCell, TheoryGrid, TheoryReport};
