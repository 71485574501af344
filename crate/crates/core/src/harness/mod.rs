//! Experiment files, multi-seed suites, statistics and report output.

pub mod config;
pub mod report;
pub mod stats;
pub mod suite;

pub use config::{preset, Arm, ExperimentConfig, TARGETS};
pub use report::{
    aggregate, learning_curve, read_csv, robustness_eval, write_csv, write_plot_data,
    AggregateReport, ArmSummary, CsvRow, CurvePoint, RobustnessResult,
};
pub use stats::{levene_test, LeveneResult};
pub use suite::{load_records, run_suite, CellStatus, RunRecord, SuiteResult};
