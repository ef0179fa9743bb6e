//! Statistics over same/different judgements and per-pair feature reports.

mod ablation;
mod bins;
mod observer;
mod regression;
mod stats;
mod table;

pub use ablation::{ablation_report, AblationReport, ConditionRate, PairTest, ABLATION_CONDITIONS};
pub use bins::{bin_proportions, Bin, DEFAULT_BINS, MIN_BIN_COUNT};
pub use observer::{median_threshold, observe_distance, simulated_observer};
pub use regression::{ols, stepwise_regression, RegressionModel, RegressionResult, RegressionStep};
pub use stats::{pearson, ranks, spearman, two_proportion_z, wilson_interval};
pub use table::{metamer_rate, Condition, Judgment, JudgmentTable, Response};
