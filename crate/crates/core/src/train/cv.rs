//! Subject-level k-fold cross-validation.

use std::collections::BTreeSet;

use serde::Serialize;

use super::folds::{subject_folds, FoldPlan};
use super::metrics::{MetricSummary, Metrics};
use super::trainer::{evaluate, train_fold, FoldFit, TrainConfig};
use crate::data::PreparedBag;
use crate::error::{MfamError, Result};
use crate::model::{Aggregator, ModelConfig};

/// Subjects used for testing, validation and training in one fold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub train_subjects: Vec<String>,
}

/// One trained and tested fold.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub split: FoldSplit,
    pub metrics: Metrics,
    pub fit: FoldFit,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub aggregator: Aggregator,
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

#[derive(Serialize)]
struct FoldJson<'a> {
    #[serde(flatten)]
    split: &'a FoldSplit,
    best_epoch: usize,
    epochs_run: usize,
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    aggregator: Aggregator,
    folds: Vec<FoldJson<'a>>,
    mean: &'a MetricSummary,
    std: &'a MetricSummary,
}

impl CvReport {
    /// Per-fold entries plus mean and population standard deviation.
    pub fn to_json_value(&self) -> serde_json::Value {
        let folds = self
            .folds
            .iter()
            .map(|f| FoldJson {
                split: &f.split,
                best_epoch: f.fit.best_epoch,
                epochs_run: f.fit.history.len(),
                metrics: &f.metrics,
            })
            .collect();
        serde_json::to_value(ReportJson {
            aggregator: self.aggregator,
            folds,
            mean: &self.mean,
            std: &self.std,
        })
        .expect("serializable report")
    }
}

fn classes_of<'a>(bags: &'a [PreparedBag], subjects: &BTreeSet<&str>) -> BTreeSet<usize> {
    bags.iter()
        .filter(|b| subjects.contains(b.subject_id.as_str()))
        .map(|b| b.label)
        .collect::<BTreeSet<_>>()
}

/// Chooses test, validation and training subjects for fold `f`. The
/// validation group is the first later fold (cyclically) whose removal
/// still leaves every class in training; if none does, validation is empty.
pub fn fold_split(
    plan: &FoldPlan,
    bags: &[PreparedBag],
    f: usize,
    num_classes: usize,
) -> Result<FoldSplit> {
    let test = plan.fold_subjects(f);
    let all: BTreeSet<&str> = plan.assignments.keys().map(String::as_str).collect();
    let without = |groups: &[usize]| -> BTreeSet<&str> {
        all.iter()
            .copied()
            .filter(|s| !groups.contains(&plan.assignments[*s]))
            .collect()
    };
    let mut val_group = None;
    for step in 1..plan.k {
        let g = (f + step) % plan.k;
        let train = without(&[f, g]);
        if classes_of(bags, &train).len() == num_classes {
            val_group = Some(g);
            break;
        }
    }
    let (val, train) = match val_group {
        Some(g) => (plan.fold_subjects(g), without(&[f, g])),
        None => (Vec::new(), without(&[f])),
    };
    if classes_of(bags, &train).len() < num_classes {
        return Err(MfamError::config(format!(
            "fold {f}: training subjects do not cover all {num_classes} classes"
        )));
    }
    Ok(FoldSplit {
        fold: f,
        test_subjects: test,
        val_subjects: val,
        train_subjects: train.into_iter().map(String::from).collect(),
    })
}

fn select<'a>(bags: &'a [PreparedBag], subjects: &[String]) -> Vec<PreparedBag> {
    bags.iter()
        .filter(|b| subjects.iter().any(|s| *s == b.subject_id))
        .cloned()
        .collect()
}

/// Derives the seed of fold `f` from the run seed.
pub fn fold_seed(seed: u64, f: usize) -> u64 {
    seed ^ (f as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn run_fold(
    bags: &[PreparedBag],
    plan: &FoldPlan,
    f: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    let split = fold_split(plan, bags, f, model_cfg.num_classes)?;
    let train = select(bags, &split.train_subjects);
    let val = select(bags, &split.val_subjects);
    let test = select(bags, &split.test_subjects);
    let train_set: BTreeSet<&str> = train.iter().map(|b| b.subject_id.as_str()).collect();
    assert!(
        test.iter().all(|b| !train_set.contains(b.subject_id.as_str())),
        "fold {f}: test subject leaked into training"
    );
    assert!(
        val.iter().all(|b| !train_set.contains(b.subject_id.as_str())),
        "fold {f}: validation subject leaked into training"
    );
    let mut cfg = model_cfg.clone();
    cfg.num_domains = train_set.len();
    let tc = TrainConfig {
        seed: fold_seed(train_cfg.seed, f),
        ..train_cfg.clone()
    };
    let fit = train_fold(&train, &val, &cfg, &tc)?;
    let metrics = evaluate(&fit.params, &test, &fit.config)?;
    Ok(FoldOutcome {
        split,
        metrics,
        fit,
    })
}

/// Trains and tests one model per fold of a subject-level split.
pub fn cross_validate(
    bags: &[PreparedBag],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    k: usize,
) -> Result<CvReport> {
    cross_validate_jobs(bags, model_cfg, train_cfg, k, 1)
}

/// [`cross_validate`] running up to `jobs` folds concurrently. Results are
/// identical for any `jobs`.
pub fn cross_validate_jobs(
    bags: &[PreparedBag],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    k: usize,
    jobs: usize,
) -> Result<CvReport> {
    if bags.is_empty() {
        return Err(MfamError::config("no bags to cross-validate"));
    }
    train_cfg.validate_loop()?;
    let subjects: Vec<String> = bags.iter().map(|b| b.subject_id.clone()).collect();
    let plan = subject_folds(&subjects, k, train_cfg.seed)?;

    let jobs = jobs.clamp(1, k);
    let mut results: Vec<Option<Result<FoldOutcome>>> = (0..k).map(|_| None).collect();
    for start in (0..k).step_by(jobs) {
        let end = (start + jobs).min(k);
        let batch: Vec<Result<FoldOutcome>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (start..end)
                .map(|f| {
                    let plan = &plan;
                    scope.spawn(move || run_fold(bags, plan, f, model_cfg, train_cfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold thread panicked"))
                .collect()
        });
        for (f, r) in (start..end).zip(batch) {
            results[f] = Some(r);
        }
    }
    let folds = results
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect::<Result<Vec<_>>>()?;

    let refs: Vec<&Metrics> = folds.iter().map(|f| &f.metrics).collect();
    let (mean, std) = MetricSummary::mean_std(&refs);
    Ok(CvReport {
        aggregator: train_cfg.aggregator,
        plan,
        folds,
        mean,
        std,
    })
}
