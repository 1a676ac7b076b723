//! End-to-end comparison experiments: configuration, the per-pair runner
//! and result reporting.

mod config;
mod report;
mod run;

pub use config::{DatasetSource, ExperimentConfig, MethodKind};
pub use report::{
    curves_svg, parse_results_csv, results_csv, summarize, summary_csv, SummaryRow, SummaryTable, DELTA_BINS,
};
pub use run::{cell_stream, run_experiment, run_pair, Experiment, PairSetup, ResultRow};
