//! Training with early stopping, the in-distribution (ID-V) and
//! out-of-distribution cross-validation (OOD-CV) protocols, metrics and the
//! point-biserial analysis.

mod data;
mod eval;
mod report;
mod runs;
mod stats;
mod train;

pub use data::{attach_claims, build_bundles, build_examples, BundleSpec, Example};
pub use eval::{evaluate_accuracy, predict, relevance_accuracy, EvalMode, Prediction};
pub use report::{attention_report, AttentionReport, SlotReport};
pub use runs::{
    config_hash, run_id_v, run_ood_cv, stratified_folds, FoldRecord, ProtocolKind, ProtocolMetrics, ProtocolOutcome, ProtocolRun,
};
pub use stats::{mean_std, point_biserial};
pub use train::{batch_gradients, train, EarlyStopping, EpochRecord, TrainConfig, TrainOutcome};
