//! The training-size ablation and its report.

mod ablation;
mod config;
mod report;
mod results;
mod suite;

pub use ablation::{
    cell_dir, checkpoint_inventory, checkpoint_name, load_inputs, run_ablation, subsample_indices,
    subsample_training_set, AblationInputs, CellMetrics, CELL_METRICS, DONE_MARKER, GROUP_REPORT, NORM_STATS,
};
pub use config::{ExperimentConfig, Variant};
pub use report::{
    code_version, config_hash, emit_report, Provenance, FONT_ENV, PLOT_FILES, PROVENANCE_JSON, REPORT_DIR,
};
pub use results::{CellFailure, ResultsRow, ResultsTable, SeedRecord, FAILURES_CSV, RESULTS_CSV, SEEDS_CSV};
pub use suite::{evaluate_suite, LeakageAudit, SuiteOutput};
