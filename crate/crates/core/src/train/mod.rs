//! Training loop, evaluation metrics and subject-level cross-validation.

mod cv;
mod folds;
mod metrics;
mod schedule;
mod trainer;

pub use cv::{
    cross_validate, cross_validate_jobs, fold_seed, fold_split, CvReport, FoldOutcome, FoldSplit,
};
pub use folds::{subject_folds, FoldPlan};
pub use metrics::{MetricSummary, Metrics};
pub use schedule::grl_schedule;
pub use trainer::{
    domain_index, evaluate, joint_loss, predict, train_fold, write_history, EpochRecord, FoldFit,
    JointLoss, TrainConfig,
};
