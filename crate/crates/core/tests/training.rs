use std::collections::BTreeSet;

use mfam_core::data::PreparedBag;
use mfam_core::model::ModelConfig;
use mfam_core::train::{cross_validate, cross_validate_jobs, evaluate, train_fold, TrainConfig};
use mfam_core::{Aggregator, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Linearly separable bags: class 1 carries a positive offset on channel 0.
fn toy_bags(subjects: usize, per_subject: usize, seed: u64) -> Vec<PreparedBag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in 0..subjects {
        for r in 0..per_subject {
            let label = (s + r) % 2;
            let data: Vec<f64> = (0..2 * 60)
                .map(|i| {
                    let offset = if label == 1 && i < 60 { 1.5 } else { 0.0 };
                    offset + rng.random_range(-0.5..0.5)
                })
                .collect();
            out.push(PreparedBag {
                subject_id: format!("s{s:02}"),
                activity: "rest".into(),
                label,
                index: r,
                features: Tensor::new(vec![2, 60], data).unwrap(),
                bursts: Vec::new(),
            });
        }
    }
    out
}

fn toy_model(domains: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(2, 2, domains);
    cfg.hidden_dim = 8;
    cfg.attention_hidden = 8;
    cfg.discr_hidden = 8;
    cfg.instance_window = 20;
    cfg.instance_stride = 10;
    cfg
}

fn toy_train(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 5e-3,
        max_epochs,
        patience: max_epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_toy_reaches_full_train_accuracy() {
    let bags = toy_bags(4, 4, 1);
    let fit = train_fold(&bags, &[], &toy_model(4), &toy_train(50)).unwrap();
    let m = evaluate(&fit.params, &bags, &fit.config).unwrap();
    assert_eq!(m.accuracy, 1.0, "history: {:?}", fit.history.last());
}

#[test]
fn zero_learning_rate_stops_at_epoch_two() {
    let bags = toy_bags(4, 4, 2);
    let (train, val) = bags.split_at(12);
    let cfg = TrainConfig {
        lr: 0.0,
        patience: 1,
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let fit = train_fold(train, val, &toy_model(3), &cfg).unwrap();
    assert_eq!(fit.history.len(), 2);
    assert_eq!(fit.best_epoch, 1);
}

#[test]
fn best_epoch_is_never_beaten_on_validation() {
    let bags = toy_bags(6, 4, 3);
    let (train, val) = bags.split_at(16);
    let cfg = TrainConfig {
        patience: 3,
        ..toy_train(15)
    };
    let fit = train_fold(train, val, &toy_model(4), &cfg).unwrap();
    let best_seen = fit.history.iter().map(|r| r.val_macro_f1).fold(0.0, f64::max);
    let restored = evaluate(&fit.params, val, &fit.config).unwrap();
    assert_eq!(restored.macro_f1, best_seen);
    assert_eq!(fit.history[fit.best_epoch - 1].val_macro_f1, best_seen);
}

#[test]
fn training_is_deterministic() {
    let bags = toy_bags(4, 4, 4);
    let (train, val) = bags.split_at(12);
    let a = train_fold(train, val, &toy_model(3), &toy_train(5)).unwrap();
    let b = train_fold(train, val, &toy_model(3), &toy_train(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_class_is_rejected() {
    let bags: Vec<PreparedBag> = toy_bags(4, 4, 5).into_iter().filter(|b| b.label == 0).collect();
    assert!(train_fold(&bags, &[], &toy_model(4), &toy_train(2)).is_err());
}

#[test]
fn cross_validation_keeps_subjects_apart() {
    let bags = toy_bags(8, 4, 6);
    let report = cross_validate(&bags, &toy_model(8), &toy_train(3), 4).unwrap();
    assert_eq!(report.folds.len(), 4);
    let mut tested = BTreeSet::new();
    for f in &report.folds {
        assert_eq!(f.split.test_subjects.len(), 2);
        let train: BTreeSet<_> = f.split.train_subjects.iter().collect();
        for s in f.split.test_subjects.iter().chain(&f.split.val_subjects) {
            assert!(!train.contains(s), "fold {}: {s} leaked", f.split.fold);
        }
        let total: usize = f.metrics.confusion.iter().flatten().sum();
        assert_eq!(total, 8);
        for s in &f.split.test_subjects {
            assert!(tested.insert(s.clone()), "{s} tested twice");
        }
    }
    assert_eq!(tested.len(), 8);
}

#[test]
fn cross_validation_is_reproducible_and_job_count_free() {
    let bags = toy_bags(8, 2, 7);
    let cfg = TrainConfig {
        aggregator: Aggregator::Gap,
        ..toy_train(3)
    };
    let a = cross_validate(&bags, &toy_model(8), &cfg, 4).unwrap();
    let b = cross_validate_jobs(&bags, &toy_model(8), &cfg, 4, 3).unwrap();
    assert_eq!(a.to_json_value(), b.to_json_value());
    assert_eq!(a.to_json_value()["aggregator"], "gap");
}
