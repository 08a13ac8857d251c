//! Confusion matrix, per-class metrics, one-vs-rest ROC curves and reports.

pub mod metrics;
pub mod report;
pub mod roc;

pub use metrics::{build_confusion, compute_metrics, format_metrics_table, ClassMetrics, ConfusionMatrix, Metrics, OneVsRest};
pub use report::{evaluate_checkpoint, evaluate_predictions, predict_all, sequences_hash, EvalReport};
pub use roc::{binary_roc, roc_auc, RocCurve, RocSet};
