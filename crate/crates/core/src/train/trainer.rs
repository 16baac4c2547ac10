//! Joint classification and adversarial subject-alignment training.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::schedule::grl_schedule;
use crate::autodiff::{AdamState, Tape, Var};
use crate::data::PreparedBag;
use crate::error::{MfamError, Result};
use crate::model::{forward_features, forward_graph, Aggregator, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the domain loss in the joint objective.
    pub adv_weight: f64,
    pub grl_gamma: f64,
    /// Bags per optimizer step; gradients are averaged over the batch.
    pub batch: usize,
    pub seed: u64,
    pub aggregator: Aggregator,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            max_epochs: 200,
            patience: 20,
            adv_weight: 1.0,
            grl_gamma: 10.0,
            batch: 1,
            seed: 42,
            aggregator: Aggregator::AttentionMil,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MfamError::config(format!("lr must be positive, got {}", self.lr)));
        }
        self.validate_loop()
    }

    /// Checks everything except `lr > 0`; a zero learning rate is accepted
    /// by the training loop itself.
    pub(crate) fn validate_loop(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(MfamError::config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch == 0 {
            return Err(MfamError::config(
                "patience, max_epochs and batch must be positive",
            ));
        }
        if !(self.adv_weight >= 0.0 && self.adv_weight.is_finite()) {
            return Err(MfamError::config(format!(
                "adv_weight must be >= 0, got {}",
                self.adv_weight
            )));
        }
        if !(self.grl_gamma >= 0.0 && self.grl_gamma.is_finite()) {
            return Err(MfamError::config(format!(
                "grl_gamma must be >= 0, got {}",
                self.grl_gamma
            )));
        }
        Ok(())
    }
}

/// `CE(cls_logits, label) + weight * CE(domain_logits, domain)`.
pub fn joint_loss(
    tape: &mut Tape,
    cls_logits: Var,
    label: usize,
    domain_logits: Var,
    domain: usize,
    adv_weight: f64,
) -> Result<JointLoss> {
    let cls = tape.cross_entropy(cls_logits, label)?;
    let adv = tape.cross_entropy(domain_logits, domain)?;
    let scaled = tape.scale(adv, adv_weight);
    let total = tape.add(cls, scaled)?;
    Ok(JointLoss { total, cls, adv })
}

#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub cls: Var,
    pub adv: Var,
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub cls_loss: f64,
    pub adv_loss: f64,
    pub lambda: f64,
    pub val_macro_f1: f64,
}

/// Output of [`train_fold`].
#[derive(Clone, Debug, PartialEq)]
pub struct FoldFit {
    /// Parameters from the best validation epoch.
    pub params: ModelParams,
    pub config: ModelConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Class probabilities for each bag.
pub fn predict(params: &ModelParams, bags: &[PreparedBag], cfg: &ModelConfig) -> Result<Vec<Tensor>> {
    bags.iter()
        .map(|b| Ok(forward_features(&b.features, params, cfg, None)?.0.probs))
        .collect()
}

/// Accuracy and macro metrics of the argmax predictions.
pub fn evaluate(params: &ModelParams, bags: &[PreparedBag], cfg: &ModelConfig) -> Result<Metrics> {
    let mut predicted = Vec::with_capacity(bags.len());
    let mut actual = Vec::with_capacity(bags.len());
    for b in bags {
        let (res, _) = forward_features(&b.features, params, cfg, None)?;
        predicted.push(res.predicted_class());
        actual.push(b.label);
    }
    for &a in &actual {
        if a >= cfg.num_classes {
            return Err(MfamError::Index {
                index: a,
                len: cfg.num_classes,
            });
        }
    }
    Ok(Metrics::from_predictions(&predicted, &actual, cfg.num_classes))
}

fn mean_cls_loss(params: &ModelParams, bags: &[PreparedBag], cfg: &ModelConfig) -> Result<f64> {
    let mut total = 0.0;
    for b in bags {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let x = tape.leaf(b.features.clone());
        let g = forward_graph(&mut tape, x, &pv, cfg, None)?;
        let l = tape.cross_entropy(g.logits, b.label)?;
        total += tape.value(l).data()[0];
    }
    Ok(total / bags.len().max(1) as f64)
}

/// Domain index of every training subject (sorted order).
pub fn domain_index(bags: &[PreparedBag]) -> BTreeMap<String, usize> {
    let mut subjects: Vec<&str> = bags.iter().map(|b| b.subject_id.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    subjects
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i))
        .collect()
}

/// Trains one model on `train`, early-stopping on `val`.
///
/// Each epoch visits the training bags in a seeded random order with the
/// reversal strength fixed at `grl_schedule((epoch - 1) / max_epochs)`.
/// After each epoch the validation macro-F1 is measured, with lower
/// validation classification loss breaking ties; the best epoch's
/// parameters are returned. Training stops after `patience` epochs without
/// improvement. With an empty `val` the final parameters are returned.
pub fn train_fold(
    train: &[PreparedBag],
    val: &[PreparedBag],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldFit> {
    train_cfg.validate_loop()?;
    let mut cfg = model_cfg.clone();
    cfg.aggregator = train_cfg.aggregator;
    cfg.validate()?;
    if train.is_empty() {
        return Err(MfamError::config("no training bags"));
    }
    for class in 0..cfg.num_classes {
        if !train.iter().any(|b| b.label == class) {
            return Err(MfamError::config(format!("class {class} has no training bags")));
        }
    }
    if let Some(b) = train.iter().chain(val).find(|b| b.label >= cfg.num_classes) {
        return Err(MfamError::Index {
            index: b.label,
            len: cfg.num_classes,
        });
    }
    let domains = domain_index(train);
    if val.iter().any(|b| domains.contains_key(&b.subject_id)) {
        return Err(MfamError::config(
            "validation subjects overlap training subjects",
        ));
    }
    if domains.len() > cfg.num_domains {
        return Err(MfamError::config(format!(
            "{} training subjects but the discriminator has {} outputs",
            domains.len(),
            cfg.num_domains
        )));
    }
    for b in train {
        if b.features.rows() != cfg.in_channels {
            return Err(MfamError::shape(format!(
                "expected {} channels, got {}",
                cfg.in_channels,
                b.features.rows()
            )));
        }
    }

    let mut params = ModelParams::init(&cfg, train_cfg.seed)?;
    let mut adam = AdamState::new(params.tensors(), train_cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = params.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();

    for epoch in 1..=train_cfg.max_epochs {
        let lambda = grl_schedule((epoch - 1) as f64 / train_cfg.max_epochs as f64, train_cfg.grl_gamma);
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_cls, mut sum_adv) = (0.0, 0.0, 0.0);

        for chunk in order.chunks(train_cfg.batch) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in chunk {
                let bag = &train[i];
                let mut tape = Tape::new();
                let pv = params.register(&mut tape);
                let x = tape.leaf(bag.features.clone());
                let g = forward_graph(&mut tape, x, &pv, &cfg, Some(lambda))?;
                let dl = g.domain_logits.expect("discriminator requested");
                let loss = joint_loss(
                    &mut tape,
                    g.logits,
                    bag.label,
                    dl,
                    domains[&bag.subject_id],
                    train_cfg.adv_weight,
                )?;
                let total = tape.value(loss.total).data()[0];
                if !total.is_finite() {
                    return Err(MfamError::NonFiniteLoss {
                        epoch,
                        bag: i,
                        subject: bag.subject_id.clone(),
                        detail: format!(
                            "cls {} adv {}",
                            tape.value(loss.cls).data()[0],
                            tape.value(loss.adv).data()[0]
                        ),
                    });
                }
                sum_total += total;
                sum_cls += tape.value(loss.cls).data()[0];
                sum_adv += tape.value(loss.adv).data()[0];

                let mut grads = tape.backward(loss.total)?;
                let gs: Vec<Tensor> = pv.all().iter().map(|&v| grads.take(v)).collect();
                match acc.as_mut() {
                    None => acc = Some(gs),
                    Some(a) => {
                        for (dst, src) in a.iter_mut().zip(&gs) {
                            for (x, y) in dst.data_mut().iter_mut().zip(src.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("nonempty chunk");
            if chunk.len() > 1 {
                let s = 1.0 / chunk.len() as f64;
                for g in grads.iter_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
            let grefs: Vec<&Tensor> = grads.iter().collect();
            adam.step(&mut params.tensors_mut(), &grefs)?;
        }

        let n = train.len() as f64;
        let (val_f1, key) = if val.is_empty() {
            (f64::NAN, (0.0, epoch as f64))
        } else {
            let m = evaluate(&params, val, &cfg)?;
            let vloss = mean_cls_loss(&params, val, &cfg)?;
            (m.macro_f1, (m.macro_f1, -vloss))
        };
        history.push(EpochRecord {
            epoch,
            train_loss: sum_total / n,
            cls_loss: sum_cls / n,
            adv_loss: sum_adv / n,
            lambda,
            val_macro_f1: val_f1,
        });
        if key > best_key {
            best_key = key;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_cfg.patience {
                break;
            }
        }
    }

    Ok(FoldFit {
        params: best,
        config: cfg,
        history,
        best_epoch,
    })
}

/// Writes the history as CSV
/// (`epoch,train_loss,cls_loss,adv_loss,lambda,val_macro_f1,aggregator`).
pub fn write_history(path: &Path, history: &[EpochRecord], aggregator: Aggregator) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,cls_loss,adv_loss,lambda,val_macro_f1,aggregator").unwrap();
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{aggregator}",
            r.epoch, r.train_loss, r.cls_loss, r.adv_loss, r.lambda, r.val_macro_f1
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| MfamError::io(path, e))
}
