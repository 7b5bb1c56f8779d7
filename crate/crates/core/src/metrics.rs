//! Detection evaluation: greedy matching, precision/recall, all-points
//! interpolated average precision, mAP at IoU 0.5 and over 0.5:0.05:0.95, and
//! class-wise non-maximum suppression.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub type ImageId = u64;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    core::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub image_id: ImageId,
    pub class_id: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruth {
    pub image_id: ImageId,
    pub class_id: usize,
    pub bbox: BBox,
}

/// Outcome of matching predictions to ground truths, indexed like the inputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    pub pred_tp: Vec<bool>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pred_tp.iter().filter(|&&t| t).count()
    }

    pub fn fp(&self) -> usize {
        self.pred_tp.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_matched.iter().filter(|&&m| !m).count()
    }
}

/// Indices of `preds` by descending score; equal scores keep input order.
pub fn score_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

fn validate(preds: &[Detection], gts: &[GroundTruth], num_classes: usize) -> Result<()> {
    for d in preds {
        if d.class_id >= num_classes {
            return Err(Error::UnknownClass {
                class_id: d.class_id,
                num_classes,
            });
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::InvalidScore(d.score));
        }
    }
    for g in gts {
        if g.class_id >= num_classes {
            return Err(Error::UnknownClass {
                class_id: g.class_id,
                num_classes,
            });
        }
        g.bbox.validated()?;
    }
    Ok(())
}

/// Greedy one-to-one matching within each (image, class).
///
/// Predictions are visited by descending score (stable under ties). Each one
/// claims the unmatched ground truth of its image and class with the highest
/// IoU, provided that IoU is at least `iou_threshold` (ties go to the lower
/// ground-truth index); otherwise it is a false positive.
pub fn match_detections(
    preds: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
    num_classes: usize,
) -> Result<MatchResult> {
    validate(preds, gts, num_classes)?;
    let mut groups: BTreeMap<(ImageId, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        groups.entry((g.image_id, g.class_id)).or_default().push(i);
    }
    let mut pred_tp = vec![false; preds.len()];
    let mut gt_matched = vec![false; gts.len()];
    for pi in score_order(preds) {
        let p = &preds[pi];
        let Some(cands) = groups.get(&(p.image_id, p.class_id)) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &gi in cands {
            if gt_matched[gi] {
                continue;
            }
            let v = iou(&p.bbox, &gts[gi].bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            gt_matched[gi] = true;
            pred_tp[pi] = true;
        }
    }
    Ok(MatchResult {
        pred_tp,
        gt_matched,
    })
}

/// `P = TP / (TP + FP)` (1 with no predictions) and `R = TP / gt_count`
/// (1 with no ground truths).
pub fn precision_recall(labels: &[bool], gt_count: usize) -> (f64, f64) {
    let tp = labels.iter().filter(|&&t| t).count();
    let p = if labels.is_empty() {
        1.0
    } else {
        tp as f64 / labels.len() as f64
    };
    let r = if gt_count == 0 {
        1.0
    } else {
        tp as f64 / gt_count as f64
    };
    (p, r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// Predictions were present for a class with no ground truth.
    pub no_ground_truth: bool,
}

/// All-points interpolated AP: the area under the precision envelope, where
/// the precision at each recall is replaced by the maximum precision at any
/// recall at least as large.
///
/// `scored` holds `(score, is_true_positive)` pairs in any order.
pub fn average_precision(scored: &[(f64, bool)], gt_count: usize) -> ApResult {
    if gt_count == 0 {
        return ApResult {
            ap: 0.0,
            no_ground_truth: !scored.is_empty(),
        };
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let mut recall = Vec::with_capacity(order.len() + 2);
    let mut precision = Vec::with_capacity(order.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let (mut tp, mut seen) = (0usize, 0usize);
    for &i in &order {
        seen += 1;
        if scored[i].1 {
            tp += 1;
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / seen as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        if recall[i] != recall[i - 1] {
            ap += (recall[i] - recall[i - 1]) * precision[i];
        }
    }
    ApResult {
        ap,
        no_ground_truth: false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub gt_count: usize,
    pub pred_count: usize,
    pub ap50: f64,
    pub ap50_95: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// One entry per class that has at least one ground truth.
    pub classes: Vec<ClassReport>,
    pub map50: f64,
    pub map50_95: f64,
    /// Class means of precision and recall at the score threshold.
    pub precision: f64,
    pub recall: f64,
    pub score_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    /// Classes that received predictions but have no ground truth.
    pub classes_without_ground_truth: Vec<usize>,
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Full evaluation. AP uses every prediction; precision, recall and the
/// TP/FP/FN counts use predictions scoring at least `score_threshold`,
/// matched at IoU 0.5. Means run over classes with ground truth.
pub fn map_report(
    preds: &[Detection],
    gts: &[GroundTruth],
    num_classes: usize,
    score_threshold: f64,
) -> Result<EvalReport> {
    validate(preds, gts, num_classes)?;
    let thresholds = coco_thresholds();
    let matches = thresholds
        .iter()
        .map(|&t| match_detections(preds, gts, t, num_classes))
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<Detection> = preds
        .iter()
        .copied()
        .filter(|d| d.score >= score_threshold)
        .collect();
    let at_threshold = match_detections(&kept, gts, 0.5, num_classes)?;

    let mut classes = Vec::new();
    let mut without_gt = Vec::new();
    for k in 0..num_classes {
        let gt_count = gts.iter().filter(|g| g.class_id == k).count();
        let pred_idx: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].class_id == k).collect();
        if gt_count == 0 {
            if !pred_idx.is_empty() {
                without_gt.push(k);
            }
            continue;
        }
        let aps: Vec<f64> = matches
            .iter()
            .map(|m| {
                let scored: Vec<(f64, bool)> =
                    pred_idx.iter().map(|&i| (preds[i].score, m.pred_tp[i])).collect();
                average_precision(&scored, gt_count).ap
            })
            .collect();
        let labels: Vec<bool> = (0..kept.len())
            .filter(|&i| kept[i].class_id == k)
            .map(|i| at_threshold.pred_tp[i])
            .collect();
        let (precision, recall) = precision_recall(&labels, gt_count);
        let tp = labels.iter().filter(|&&t| t).count();
        let matched = (0..gts.len())
            .filter(|&i| gts[i].class_id == k && at_threshold.gt_matched[i])
            .count();
        classes.push(ClassReport {
            class_id: k,
            gt_count,
            pred_count: pred_idx.len(),
            ap50: aps[0],
            ap50_95: aps.iter().sum::<f64>() / aps.len() as f64,
            precision,
            recall,
            tp,
            fp: labels.len() - tp,
            fn_count: gt_count - matched,
        });
    }
    let mean = |f: fn(&ClassReport) -> f64| {
        if classes.is_empty() {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / classes.len() as f64
        }
    };
    Ok(EvalReport {
        map50: mean(|c| c.ap50),
        map50_95: mean(|c| c.ap50_95),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        score_threshold,
        tp: classes.iter().map(|c| c.tp).sum(),
        fp: classes.iter().map(|c| c.fp).sum(),
        fn_count: classes.iter().map(|c| c.fn_count).sum(),
        classes,
        classes_without_ground_truth: without_gt,
    })
}

/// Greedy class-wise, image-wise non-maximum suppression. A detection is
/// dropped when its IoU with an already kept detection of the same image and
/// class exceeds `iou_threshold`, so a threshold of 1.0 keeps everything.
/// Survivors are returned in descending score order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in score_order(dets) {
        let d = dets[i];
        let suppressed = kept.iter().any(|k| {
            k.image_id == d.image_id && k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(image_id: ImageId, class_id: usize, bbox: BBox, score: f64) -> Detection {
        Detection {
            image_id,
            class_id,
            bbox,
            score,
        }
    }

    fn gt(image_id: ImageId, class_id: usize, bbox: BBox) -> GroundTruth {
        GroundTruth {
            image_id,
            class_id,
            bbox,
        }
    }

    const B: BBox = BBox::new(10.0, 10.0, 6.0, 6.0);

    #[test]
    fn exact_hit() {
        let m = match_detections(&[det(0, 0, B, 0.9)], &[gt(0, 0, B)], 0.5, 1).unwrap();
        assert_eq!((m.tp(), m.fp(), m.fn_count()), (1, 0, 0));
    }

    #[test]
    fn duplicate_is_false_positive() {
        let preds = [det(0, 0, B, 0.8), det(0, 0, B.translated(0.5, 0.0), 0.9)];
        let m = match_detections(&preds, &[gt(0, 0, B)], 0.5, 1).unwrap();
        assert_eq!(m.pred_tp, vec![false, true]);
    }

    #[test]
    fn ties_keep_input_order() {
        let preds = [det(0, 0, B, 0.7), det(0, 0, B, 0.7)];
        let m = match_detections(&preds, &[gt(0, 0, B)], 0.5, 1).unwrap();
        assert_eq!(m.pred_tp, vec![true, false]);
    }

    #[test]
    fn cross_class_and_cross_image_never_match() {
        let preds = [det(0, 1, B, 0.9), det(1, 0, B, 0.9)];
        let m = match_detections(&preds, &[gt(0, 0, B)], 0.5, 2).unwrap();
        assert_eq!(m.tp(), 0);
    }

    #[test]
    fn unknown_class_rejected() {
        let err = match_detections(&[det(0, 3, B, 0.5)], &[], 0.5, 2).unwrap_err();
        assert_eq!(
            err,
            Error::UnknownClass {
                class_id: 3,
                num_classes: 2
            }
        );
    }

    #[test]
    fn precision_recall_conventions() {
        let mut labels = vec![true; 8];
        labels.extend([false, false]);
        assert_eq!(precision_recall(&labels, 10), (0.8, 0.8));
        assert_eq!(precision_recall(&[], 3), (1.0, 0.0));
        assert_eq!(precision_recall(&[false], 0), (0.0, 1.0));
    }

    #[test]
    fn ap_hand_computed() {
        assert_eq!(average_precision(&[(0.9, true)], 1).ap, 1.0);
        assert_eq!(average_precision(&[(0.9, true), (0.8, false)], 1).ap, 1.0);
        assert_eq!(average_precision(&[(0.9, false), (0.8, true)], 1).ap, 0.5);
        let none = average_precision(&[(0.9, false)], 0);
        assert_eq!((none.ap, none.no_ground_truth), (0.0, true));
    }

    #[test]
    fn map_of_perfect_and_half() {
        let b2 = B.translated(30.0, 0.0);
        let gts = [gt(0, 0, B), gt(0, 1, b2)];
        let perfect = [det(0, 0, B, 0.9), det(0, 1, b2, 0.9)];
        let r = map_report(&perfect, &gts, 2, 0.25).unwrap();
        assert_eq!((r.map50, r.map50_95), (1.0, 1.0));
        // class 1: FP ranked above the TP -> AP 0.5 at every threshold
        let half = [
            det(0, 0, B, 0.9),
            det(0, 1, b2.translated(50.0, 0.0), 0.95),
            det(0, 1, b2, 0.9),
        ];
        let r = map_report(&half, &gts, 2, 0.25).unwrap();
        assert_eq!(r.classes[1].ap50, 0.5);
        assert_eq!(r.map50, 0.75);
        assert_eq!(r.tp + r.fn_count, 2);
    }

    #[test]
    fn empty_inputs_give_empty_report() {
        let r = map_report(&[], &[], 6, 0.25).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.map50, 0.0);
    }

    #[test]
    fn nms_threshold_one_keeps_everything() {
        let dets = [det(0, 0, B, 0.9), det(0, 0, B, 0.8), det(0, 0, B.translated(1.0, 0.0), 0.7)];
        assert_eq!(nms(&dets, 1.0).len(), 3);
        assert_eq!(nms(&dets, 0.5).len(), 1);
        let other_class = [det(0, 0, B, 0.9), det(0, 1, B, 0.8)];
        assert_eq!(nms(&other_class, 0.5).len(), 2);
    }
}
