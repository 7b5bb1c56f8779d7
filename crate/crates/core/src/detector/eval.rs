//! Decoding, post-processing and scoring of a trained detector.

use alloc::vec::Vec;

use super::config::{DetectorConfig, EvalConfig};
use super::loss::decode_box;
use super::model::Detector;
use super::train::{batch_input, Sample};
use crate::error::Result;
use crate::metrics::{map_report, nms, score_order, Detection, EvalReport, GroundTruth};
use crate::real::Real;
use crate::tensor::{sigmoid, BnMode, FeatureMap};

/// Turns a head output into detections. A cell's score is
/// `sigmoid(obj) · max_k sigmoid(cls_k)` and its class the arg-max; cells below
/// `conf_floor` are dropped, then class-wise NMS and a per-image cap apply.
pub fn decode_head<T: Real>(
    head: &FeatureMap<T>,
    image_ids: &[u64],
    stride: f64,
    cfg: &EvalConfig,
) -> Vec<Detection> {
    let s = head.shape();
    let mut out = Vec::new();
    for b in 0..s.n {
        let mut dets = Vec::new();
        for r in 0..s.h {
            for c in 0..s.w {
                let v = |ch: usize| head.at(b, ch, r, c).as_f64();
                let obj = sigmoid(v(0));
                let (mut class_id, mut best) = (0, f64::NEG_INFINITY);
                for k in 0..s.c - 5 {
                    let p = sigmoid(v(5 + k));
                    if p > best {
                        best = p;
                        class_id = k;
                    }
                }
                let score = obj * best;
                if score < cfg.conf_floor {
                    continue;
                }
                dets.push(Detection {
                    image_id: image_ids[b],
                    class_id,
                    bbox: decode_box([v(1), v(2), v(3), v(4)], r, c, stride),
                    score,
                });
            }
        }
        let kept = nms(&dets, cfg.nms_iou);
        out.extend(kept.into_iter().take(cfg.max_detections));
    }
    out
}

/// Eval-mode predictions over `samples`, processed in chunks of `batch_size`.
pub fn predict<T: Real>(model: &Detector<T>, samples: &[Sample], cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let mut model = model.clone();
    model.set_mode(BnMode::Eval);
    let mut out = Vec::new();
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let x = batch_input::<T>(chunk, cfg.input_size)?;
        let head = model.forward(&x)?;
        let ids: Vec<u64> = chunk.iter().map(|s| s.image_id).collect();
        out.extend(decode_head(&head, &ids, DetectorConfig::HEAD_STRIDE as f64, &cfg.eval));
    }
    let order = score_order(&out);
    Ok(order.into_iter().map(|i| out[i]).collect())
}

pub fn ground_truths(samples: &[Sample]) -> Vec<GroundTruth> {
    samples
        .iter()
        .flat_map(|s| {
            s.targets.iter().map(|t| GroundTruth {
                image_id: s.image_id,
                class_id: t.class_id,
                bbox: t.bbox,
            })
        })
        .collect()
}

pub fn evaluate<T: Real>(model: &Detector<T>, samples: &[Sample], cfg: &DetectorConfig) -> Result<EvalReport> {
    let preds = predict(model, samples, cfg)?;
    map_report(&preds, &ground_truths(samples), cfg.num_classes, cfg.eval.score_threshold)
}
