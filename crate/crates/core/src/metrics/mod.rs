//! APRC, pixel miscounts, checkpoint ensembles and report aggregation.

mod counts;
mod ensemble;
mod pr;
mod report;

pub use counts::{binarize, count_errors, lower_median, std_of_mean, ChipCountError, CountMedians, DECISION_THRESHOLD};
pub use ensemble::{ensemble_mean, ensemble_predict, member_predictions, EmbeddingProvider};
pub use pr::{aprc, aprc_of, pr_curve, random_baseline_aprc, PrCurve};
pub use report::{aggregate, evaluate_predictions, pixel_baseline, ErrorBars, MetricsReport, RunMetrics};
