//! Metrics, ROC analysis, cross-validation and significance tests.

mod cv;
mod metrics;
mod roc;
mod stats;

pub use cv::{kfold_cv, CvSummary, FoldOutcome, FoldResult, CV_METRICS};
pub(crate) use metrics::write_text;
pub use metrics::{
    evaluate, evaluate_logits, evaluate_probs, predict_samples, ClassMetrics, ConfusionMatrix, EvalReport,
};
pub use roc::{roc_auc, roc_curve, RocCurve, RocPoint};
pub use stats::{
    class_confidence_intervals, confidence_interval, mean, paired_t_test, regularized_incomplete_beta, sample_std,
    student_t_two_sided_p, CiMethod, ConfidenceInterval, TTest,
};
