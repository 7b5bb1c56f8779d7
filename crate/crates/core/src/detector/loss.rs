//! Target assignment, box encoding and the detection loss.
//!
//! Head channel layout per cell: `[obj, tx, ty, tw, th, cls_0 .. cls_K-1]`.
//! A cell `(row, col)` decodes to
//!
//! ```text
//! cx = (col + sigmoid(tx)) * stride      w = stride * exp(tw)
//! cy = (row + sigmoid(ty)) * stride      h = stride * exp(th)
//! ```
//!
//! Each ground truth is assigned to the single cell containing its center.

use alloc::vec;
use alloc::vec::Vec;

use super::config::{BoxLossKind, LossWeights};
use crate::error::{Error, Result};
use crate::geometry::{iou_loss, nwd_loss, BBox, BoxLoss};
use crate::real::Real;
use crate::tensor::{sigmoid, FeatureMap};

/// Log-size logits are clamped to this magnitude when decoding.
pub const MAX_LOG_SIZE: f64 = 8.0;
/// Encoded cell offsets stay this far inside `(0, 1)` so the logit is finite.
pub const OFFSET_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub class_id: usize,
    /// Pixels.
    pub bbox: BBox,
}

/// A positive cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub batch: usize,
    pub row: usize,
    pub col: usize,
    pub target: Target,
}

/// Box regression logits `(tx, ty, tw, th)` of a cell.
pub type BoxLogits = [f64; 4];

pub fn decode_box(logits: BoxLogits, row: usize, col: usize, stride: f64) -> BBox {
    let tw = logits[2].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE);
    let th = logits[3].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE);
    BBox::new(
        (col as f64 + sigmoid(logits[0])) * stride,
        (row as f64 + sigmoid(logits[1])) * stride,
        stride * libm::exp(tw),
        stride * libm::exp(th),
    )
}

/// Logits that decode to `b` from cell `(row, col)`; inverse of
/// [`decode_box`] for boxes whose center lies in that cell.
pub fn encode_box(b: &BBox, row: usize, col: usize, stride: f64) -> BoxLogits {
    let logit = |f: f64| {
        let f = f.clamp(OFFSET_EPS, 1.0 - OFFSET_EPS);
        libm::log(f / (1.0 - f))
    };
    [
        logit(b.cx / stride - col as f64),
        logit(b.cy / stride - row as f64),
        libm::log(b.w / stride),
        libm::log(b.h / stride),
    ]
}

/// Center-cell assignment. When two targets share a cell the first one in
/// the image's list keeps it and the other is ignored.
pub fn assign_targets(targets: &[Vec<Target>], grid: (usize, usize), stride: f64) -> Vec<Assignment> {
    let (gh, gw) = grid;
    let mut out = Vec::new();
    for (batch, image) in targets.iter().enumerate() {
        let mut taken = vec![false; gh * gw];
        for t in image {
            let col = (libm::floor(t.bbox.cx / stride).max(0.0) as usize).min(gw - 1);
            let row = (libm::floor(t.bbox.cy / stride).max(0.0) as usize).min(gh - 1);
            if core::mem::replace(&mut taken[row * gw + col], true) {
                continue;
            }
            out.push(Assignment {
                batch,
                row,
                col,
                target: *t,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub num_classes: usize,
    pub stride: f64,
    pub box_loss: BoxLossKind,
    pub weights: LossWeights,
}

/// Weighted total and its components (components are unweighted).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub box_loss: f64,
    pub obj_loss: f64,
    pub cls_loss: f64,
    pub num_positive: usize,
    /// No cell was positive, so the box and class terms are zero.
    pub no_positive: bool,
    pub degenerate_boxes: usize,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn box_loss(kind: &BoxLossKind, pred: &BBox, gt: &BBox) -> BoxLoss {
    match kind {
        BoxLossKind::Iou => iou_loss(pred, gt),
        BoxLossKind::Nwd(cfg) => nwd_loss(pred, gt, cfg),
    }
}

/// Loss of a head output against per-image targets, with its gradient with
/// respect to the head output.
///
/// * objectness: mean BCE over positive cells plus mean BCE over negative
///   cells;
/// * class: per positive cell, BCE summed over the `K` logits, averaged over
///   positives;
/// * box: the configured box loss of the decoded prediction, averaged over
///   positives.
pub fn compute_loss<T: Real>(
    head: &FeatureMap<T>,
    targets: &[Vec<Target>],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, FeatureMap<T>)> {
    let s = head.shape();
    if s.c != 5 + cfg.num_classes {
        return Err(Error::shape("compute_loss head channels", 5 + cfg.num_classes, s.c));
    }
    if targets.len() != s.n {
        return Err(Error::shape("compute_loss targets per image", s.n, targets.len()));
    }
    for t in targets.iter().flatten() {
        if t.class_id >= cfg.num_classes {
            return Err(Error::UnknownClass {
                class_id: t.class_id,
                num_classes: cfg.num_classes,
            });
        }
        t.bbox.validated()?;
    }
    let assignments = assign_targets(targets, (s.h, s.w), cfg.stride);
    let n_pos = assignments.len();
    let n_neg = s.n * s.plane() - n_pos;
    let at = |b: usize, c: usize, r: usize, col: usize| head.index(b, c, r, col);
    let val = |i: usize| head.data()[i].as_f64();

    let mut grad = vec![0.0f64; head.len()];
    let mut positive = vec![false; s.n * s.plane()];
    for a in &assignments {
        positive[a.batch * s.plane() + a.row * s.w + a.col] = true;
    }

    // objectness
    let w = cfg.weights;
    let (mut obj_pos, mut obj_neg) = (0.0, 0.0);
    for b in 0..s.n {
        for r in 0..s.h {
            for c in 0..s.w {
                let i = at(b, 0, r, c);
                let z = val(i);
                if positive[b * s.plane() + r * s.w + c] {
                    obj_pos += softplus(-z);
                    grad[i] = w.obj_w * (sigmoid(z) - 1.0) / n_pos as f64;
                } else {
                    obj_neg += softplus(z);
                    grad[i] = w.obj_w * sigmoid(z) / n_neg as f64;
                }
            }
        }
    }
    let mut obj_loss = 0.0;
    if n_pos > 0 {
        obj_loss += obj_pos / n_pos as f64;
    }
    if n_neg > 0 {
        obj_loss += obj_neg / n_neg as f64;
    }

    let mut cls_loss = 0.0;
    let mut box_total = 0.0;
    let mut degenerate = 0;
    for a in &assignments {
        let (b, r, c) = (a.batch, a.row, a.col);
        for k in 0..cfg.num_classes {
            let i = at(b, 5 + k, r, c);
            let z = val(i);
            let y = if k == a.target.class_id { 1.0 } else { 0.0 };
            cls_loss += if y == 1.0 { softplus(-z) } else { softplus(z) };
            grad[i] = w.cls_w * (sigmoid(z) - y) / n_pos as f64;
        }
        let idx = [at(b, 1, r, c), at(b, 2, r, c), at(b, 3, r, c), at(b, 4, r, c)];
        let logits = idx.map(val);
        let pred = decode_box(logits, r, c, cfg.stride);
        let bl = box_loss(&cfg.box_loss, &pred, &a.target.bbox);
        degenerate += bl.degenerate as usize;
        box_total += bl.loss;
        // chain through the decoding
        let sx = sigmoid(logits[0]);
        let sy = sigmoid(logits[1]);
        let active = |t: f64| if t.abs() < MAX_LOG_SIZE { 1.0 } else { 0.0 };
        let dpred = [
            cfg.stride * sx * (1.0 - sx),
            cfg.stride * sy * (1.0 - sy),
            pred.w * active(logits[2]),
            pred.h * active(logits[3]),
        ];
        for k in 0..4 {
            grad[idx[k]] = w.box_w * bl.grad[k] * dpred[k] / n_pos as f64;
        }
    }
    let (box_loss, cls_loss) = if n_pos > 0 {
        (box_total / n_pos as f64, cls_loss / n_pos as f64)
    } else {
        (0.0, 0.0)
    };
    let total = w.box_w * box_loss + w.obj_w * obj_loss + w.cls_w * cls_loss;
    let grad = FeatureMap::from_vec(s, grad.into_iter().map(T::of).collect())?;
    Ok((
        LossBreakdown {
            total,
            box_loss,
            obj_loss,
            cls_loss,
            num_positive: n_pos,
            no_positive: n_pos == 0,
            degenerate_boxes: degenerate,
        },
        grad,
    ))
}
