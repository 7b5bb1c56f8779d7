//! Deterministic mini-batch training with early stopping on validation mAP.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::config::DetectorConfig;
use super::eval::evaluate;
use super::loss::{compute_loss, LossConfig, Target};
use super::model::Detector;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;
use crate::tensor::{BnMode, FeatureMap, Shape4};

/// One grayscale image with its boxes (pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image_id: u64,
    /// Row-major `side × side` pixels.
    pub pixels: Vec<u8>,
    pub targets: Vec<Target>,
}

/// `(n, 1, side, side)` batch with pixels scaled to `[0, 1]`.
pub fn batch_input<T: Real>(samples: &[Sample], side: usize) -> Result<FeatureMap<T>> {
    let plane = side * side;
    let mut data = Vec::with_capacity(samples.len() * plane);
    for s in samples {
        if s.pixels.len() != plane {
            return Err(Error::shape("sample pixels", plane, s.pixels.len()));
        }
        data.extend(s.pixels.iter().map(|&p| T::of(p as f64 / 255.0)));
    }
    FeatureMap::from_vec(Shape4::new(samples.len(), 1, side, side), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Batch means of the weighted total and of each component.
    pub train_loss: f64,
    pub box_loss: f64,
    pub obj_loss: f64,
    pub cls_loss: f64,
    pub val_map50: f64,
}

pub struct TrainOutcome<T> {
    /// Parameters at the epoch with the best validation mAP@0.5 (earliest on
    /// ties); the final parameters when there is no validation split.
    pub best: Detector<T>,
    pub best_epoch: usize,
    pub last: Detector<T>,
    pub optimizer: Adam<T>,
    pub history: Vec<EpochMetrics>,
    pub stopped_early: bool,
}

pub fn loss_config(cfg: &DetectorConfig) -> LossConfig {
    LossConfig {
        num_classes: cfg.num_classes,
        stride: DetectorConfig::HEAD_STRIDE as f64,
        box_loss: cfg.box_loss,
        weights: cfg.loss_weights,
    }
}

/// One optimizer step on a batch; returns the loss breakdown.
pub fn train_step<T: Real>(
    model: &mut Detector<T>,
    opt: &mut Adam<T>,
    batch: &[Sample],
    cfg: &DetectorConfig,
) -> Result<super::loss::LossBreakdown> {
    model.set_mode(BnMode::Train);
    let x = batch_input::<T>(batch, cfg.input_size)?;
    let (head, cache) = model.forward_cached(&x)?;
    let targets: Vec<Vec<Target>> = batch.iter().map(|s| s.targets.clone()).collect();
    let (loss, grad) = compute_loss(&head, &targets, &loss_config(cfg))?;
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            detail: format!("{loss:?}"),
        });
    }
    let grads = model.backward(&cache, &grad)?;
    opt.apply(model, &grads)?;
    model.update_running_stats(&cache);
    Ok(loss)
}

/// Trains from `cfg.seed`. The batch order of every epoch comes from its own
/// stream, so runs are reproducible bit for bit. `on_epoch` sees each epoch's
/// metrics as soon as they are known.
pub fn train<T: Real>(
    cfg: &DetectorConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let mut model = Detector::<T>::build(cfg)?;
    let mut opt = Adam::new(cfg.optimizer, &model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, rng::label_id("shuffle") ^ epoch as u64));
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            // A lone trailing sample cannot feed train-mode batch statistics.
            if idx.len() < 2 && order.len() >= 2 {
                continue;
            }
            let batch: Vec<Sample> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let loss = train_step(&mut model, &mut opt, &batch, cfg).map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("images {:?}: {detail}", batch.iter().map(|s| s.image_id).collect::<Vec<_>>()),
                },
                e => e,
            })?;
            for (acc, v) in sums.iter_mut().zip([loss.total, loss.box_loss, loss.obj_loss, loss.cls_loss]) {
                *acc += v;
            }
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let val_map50 = if val_set.is_empty() {
            0.0
        } else {
            evaluate(&model, val_set, cfg)?.map50
        };
        let m = EpochMetrics {
            epoch,
            train_loss: sums[0] / n,
            box_loss: sums[1] / n,
            obj_loss: sums[2] / n,
            cls_loss: sums[3] / n,
            val_map50,
        };
        on_epoch(&m);
        history.push(m);
        if val_set.is_empty() || val_map50 > best.2 {
            best = (model.clone(), epoch, val_map50);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.set_mode(BnMode::Eval);
    best.0.set_mode(BnMode::Eval);
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        last: model,
        optimizer: opt,
        history,
        stopped_early,
    })
}

/// Human-readable one-line summary of an epoch.
pub fn describe(m: &EpochMetrics) -> String {
    format!(
        "epoch {:>3}  loss {:.4}  box {:.4}  obj {:.4}  cls {:.4}  val mAP50 {:.4}",
        m.epoch, m.train_loss, m.box_loss, m.obj_loss, m.cls_loss, m.val_map50
    )
}
