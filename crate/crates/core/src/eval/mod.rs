//! Thresholded metrics, precision-recall analysis, threshold selection and
//! the ablation harness. Apnea is the positive class; a score at or above the
//! threshold predicts apnea.

mod ablation;
mod curve;
mod metrics;

pub use ablation::{ablation_csv, ablation_run, AblationRow, AblationRun, ABLATION_CSV_HEADER};
pub use curve::{pr_auc, pr_curve, report_at, threshold_sweep, MetricsReport, Objective, PrCurve, PrPoint};
pub use metrics::{confusion_at_threshold, derive_metrics, ConfusionMatrix, Metrics};
