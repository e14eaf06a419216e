//! Experiment driver: training, portfolio construction, evaluation and
//! report files.

pub mod config;
pub mod experiment;
pub mod histogram;

pub use config::{parse_methods, ExperimentConfig, Method};
pub use experiment::{
    format_table, load_run, prepare_dataset, run_experiment, run_on_dataset, sample_portfolio, var_row, write_report,
    write_tables, Diagnostics, ExperimentReport, RunMetadata,
};
pub use histogram::{emit_histogram, Histogram};
