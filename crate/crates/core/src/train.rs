//! Mini-batch SGD training with a step learning-rate schedule and
//! best-on-validation model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment_stack, batch_tensor, AugmentParams, FrameStack};
use crate::detector::{assign_targets, detection_loss, fit_anchors, LayerStack, Targets};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::optim::{Sgd, SgdConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// Learning-rate multiplier applied once the decay point is reached.
    pub lr_decay: f32,
    /// Fraction of `epochs` after which the decay applies.
    pub lr_decay_at: f32,
    pub seed: u64,
    pub augment: bool,
    pub max_translate: f32,
    pub max_scale: f32,
    pub conf_threshold: f32,
    pub nms_iou: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            sgd: SgdConfig::default(),
            lr_decay: 0.1,
            lr_decay_at: 0.8,
            seed: 0,
            augment: true,
            max_translate: 0.1,
            max_scale: 0.2,
            conf_threshold: 0.25,
            nms_iou: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train config", "epochs and batch size must be positive"));
        }
        if !(self.lr_decay > 0.0 && (0.0..=1.0).contains(&self.lr_decay_at)) {
            return Err(Error::invalid("train config", "bad learning-rate schedule"));
        }
        self.sgd.validate()
    }

    /// Learning rate for a zero-based epoch index.
    pub fn learning_rate(&self, epoch: usize) -> f32 {
        let decay_epoch = (self.lr_decay_at * self.epochs as f32).round() as usize;
        if epoch >= decay_epoch {
            self.sgd.learning_rate * self.lr_decay
        } else {
            self.sgd.learning_rate
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub lr: f32,
    pub loss: f32,
    pub loss_obj: f32,
    pub loss_cls: f32,
    pub loss_box: f32,
    pub val_precision: Option<f64>,
    pub val_recall: Option<f64>,
    pub val_map50: Option<f64>,
    pub val_map5095: Option<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,loss,loss_obj,loss_cls,loss_box,val_p,val_r,val_map50,val_map5095";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss,
            self.loss_obj,
            self.loss_cls,
            self.loss_box,
            opt(self.val_precision),
            opt(self.val_recall),
            opt(self.val_map50),
            opt(self.val_map5095)
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model by validation mAP@0.5, or the final model without validation data.
    pub best: LayerStack,
    pub best_epoch: usize,
    pub best_map50: Option<f64>,
    pub last: LayerStack,
    pub log: Vec<EpochLog>,
}

/// Input tensor and targets for a batch of stacks under the given augmentations.
///
/// Only the target-frame labels of each stack are used.
pub fn training_batch(stacks: &[&FrameStack], augs: &[AugmentParams], model: &LayerStack) -> Result<(Tensor, Targets)> {
    if stacks.len() != augs.len() {
        return Err(Error::invalid(
            "training batch",
            "one augmentation per stack is required",
        ));
    }
    let augmented: Vec<FrameStack> = stacks.iter().zip(augs).map(|(s, a)| augment_stack(s, a)).collect();
    let input = batch_tensor(&augmented)?;
    let parts = augmented
        .iter()
        .map(|s| assign_targets(&s.labels, &model.config))
        .collect::<Result<Vec<_>>>()?;
    Ok((input, Targets::stack(&parts)?))
}

/// Fits `k` anchors to the target-frame boxes of `stacks`.
pub fn anchors_for(stacks: &[FrameStack], k: usize) -> Vec<(f32, f32)> {
    let shapes: Vec<(f32, f32)> = stacks
        .iter()
        .flat_map(|s| s.labels.iter().map(|l| (l.w, l.h)))
        .collect();
    fit_anchors(&shapes, k, 50)
}

/// One optimizer step on a prepared batch; returns the loss terms.
pub fn train_step(model: &mut LayerStack, sgd: &mut Sgd, input: &Tensor, targets: &Targets) -> Result<[f32; 4]> {
    let cache = model.forward_cached(input)?;
    let loss = detection_loss(cache.head(), targets, &model.config)?;
    let terms = [loss.total, loss.objectness, loss.class, loss.boxes];
    if terms.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training loss".into()));
    }
    model.backward(&cache, &loss.grad)?;
    let mut params = model.named_params_mut();
    let mut refs: Vec<(&str, &mut Tensor)> = params.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
    sgd.step(&mut refs)?;
    Ok(terms)
}

/// Trains `model`. After each epoch `on_epoch` receives the log entry and,
/// when validation mAP@0.5 improved, the new best model.
pub fn train(
    model: LayerStack,
    train_set: &[FrameStack],
    val_set: &[FrameStack],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, Option<&LayerStack>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training", "training set is empty"));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg.sgd)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(LayerStack, usize, f64)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        sgd.set_learning_rate(lr);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let stacks: Vec<&FrameStack> = chunk.iter().map(|&i| &train_set[i]).collect();
            let augs: Vec<AugmentParams> = stacks
                .iter()
                .map(|_| {
                    if cfg.augment {
                        AugmentParams::sample(&mut rng, cfg.max_translate, cfg.max_scale)
                    } else {
                        AugmentParams::IDENTITY
                    }
                })
                .collect();
            let (input, targets) = training_batch(&stacks, &augs, &model)?;
            let terms = train_step(&mut model, &mut sgd, &input, &targets).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFinite(format!("training loss at epoch {}", epoch + 1)),
                other => other,
            })?;
            for (s, t) in sums.iter_mut().zip(terms) {
                *s += t as f64;
            }
            batches += 1;
        }
        let mean = |i: usize| (sums[i] / batches as f64) as f32;
        let mut entry = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: mean(0),
            loss_obj: mean(1),
            loss_cls: mean(2),
            loss_box: mean(3),
            val_precision: None,
            val_recall: None,
            val_map50: None,
            val_map5095: None,
        };
        let mut improved = false;
        if !val_set.is_empty() {
            let r = evaluate(&model, val_set, cfg.conf_threshold, cfg.nms_iou)?;
            entry.val_precision = Some(r.precision);
            entry.val_recall = Some(r.recall);
            entry.val_map50 = Some(r.map50);
            entry.val_map5095 = Some(r.map5095);
            if best.as_ref().is_none_or(|b| r.map50 > b.2) {
                best = Some((model.clone(), epoch + 1, r.map50));
                improved = true;
            }
        }
        on_epoch(&entry, if improved { best.as_ref().map(|b| &b.0) } else { None })?;
        log.push(entry);
    }

    let (best, best_epoch, best_map50) = match best {
        Some((m, e, v)) => (m, e, Some(v)),
        None => (model.clone(), cfg.epochs, None),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_map50,
        last: model,
        log,
    })
}

/// Sequence-level train/validation split: returns `(train, val)` sequence indices.
///
/// With two or more sequences the validation side gets at least one and at
/// most all but one of them.
pub fn split_sequences(count: usize, val_fraction: f32, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(
            "validation fraction",
            format!("{val_fraction} is not in (0, 1)"),
        ));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = if count < 2 {
        0
    } else {
        ((val_fraction * count as f32).round() as usize).clamp(1, count - 1)
    };
    let val = idx.split_off(count - n_val);
    idx.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    Ok((idx, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_steps_once() {
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate(7), 0.01);
        assert!((cfg.learning_rate(8) - 0.001).abs() < 1e-9);
        assert!((cfg.learning_rate(9) - 0.001).abs() < 1e-9);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (tr, va) = split_sequences(10, 0.2, 4).unwrap();
        assert_eq!(va.len(), 2);
        let mut all: Vec<_> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_sequences(10, 0.2, 4).unwrap(), (tr, va));
        assert!(split_sequences(10, 1.0, 0).is_err());
        assert_eq!(split_sequences(1, 0.5, 0).unwrap().1.len(), 0);
        assert_eq!(split_sequences(2, 0.01, 0).unwrap().1.len(), 1);
    }

    #[test]
    fn csv_row_arity() {
        let e = EpochLog {
            epoch: 1,
            lr: 0.01,
            loss: 1.0,
            loss_obj: 0.1,
            loss_cls: 0.2,
            loss_box: 0.7,
            val_precision: None,
            val_recall: None,
            val_map50: Some(0.5),
            val_map5095: None,
        };
        assert_eq!(e.csv_row().split(',').count(), EpochLog::CSV_HEADER.split(',').count());
    }
}
