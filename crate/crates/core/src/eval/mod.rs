//! Classification metrics, the model-complexity summary, and one-way ANOVA.

mod anova;
mod metrics;
mod summary;

pub use anova::{anova_raw, anova_summary, f_survival, group_stats, significance_marker, AnovaResult, GroupStats};
pub use metrics::{argmax, evaluate, metrics_from_cm, ConfusionMatrix, Evaluation, MetricsReport, Prediction};
pub use summary::{estimated_total_mb, round2, size_mb, summarize_model, SummaryReport};
