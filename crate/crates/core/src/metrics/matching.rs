use crate::detector::{BoxLabel, Detection};
use crate::metrics::iou::{iou_unchecked, BBox};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Per-image matching outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub thresholds: Vec<f64>,
    /// `tp[t][i]`: prediction `i` (input order) is a true positive at threshold `t`.
    pub tp: Vec<Vec<bool>>,
    /// `matched[t][i]`: ground-truth index claimed by prediction `i`.
    pub matched: Vec<Vec<Option<usize>>>,
    /// Ground-truth boxes left unmatched at each threshold.
    pub unmatched_gt: Vec<usize>,
}

/// Greedy class-aware matching. Predictions are visited by descending
/// confidence (ties: lower index); each claims the unmatched same-class
/// ground truth with the highest IoU (ties: lower index) if that IoU reaches
/// the threshold.
pub fn match_detections(preds: &[Detection], gts: &[BoxLabel], thresholds: &[f64]) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].confidence.total_cmp(&preds[i].confidence).then(i.cmp(&j)));
    let gt_boxes: Vec<BBox> = gts.iter().map(BBox::from).collect();
    let pred_boxes: Vec<BBox> = preds.iter().map(BBox::from).collect();

    let mut tp = vec![vec![false; preds.len()]; thresholds.len()];
    let mut matched = vec![vec![None; preds.len()]; thresholds.len()];
    let mut unmatched_gt = Vec::with_capacity(thresholds.len());
    for (t, &thr) in thresholds.iter().enumerate() {
        let mut taken = vec![false; gts.len()];
        for &i in &order {
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in gts.iter().enumerate() {
                if taken[j] || gt.class_id != preds[i].class_id {
                    continue;
                }
                let v = iou_unchecked(&pred_boxes[i], &gt_boxes[j]);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, v)) = best {
                if v >= thr {
                    taken[j] = true;
                    tp[t][i] = true;
                    matched[t][i] = Some(j);
                }
            }
        }
        unmatched_gt.push(taken.iter().filter(|&&m| !m).count());
    }
    MatchResult {
        thresholds: thresholds.to_vec(),
        tp,
        matched,
        unmatched_gt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(cx: f32) -> BoxLabel {
        BoxLabel::new(0, cx, 0.5, 0.2, 0.2)
    }

    fn pred(conf: f32, cx: f32, class_id: usize) -> Detection {
        Detection {
            class_id,
            confidence: conf,
            cx,
            cy: 0.5,
            w: 0.2,
            h: 0.2,
        }
    }

    #[test]
    fn exact_match_is_tp_everywhere() {
        let m = match_detections(&[pred(0.9, 0.5, 0)], &[gt(0.5)], &[0.5, 0.75, 1.0]);
        assert_eq!(m.tp, vec![vec![true]; 3]);
        assert_eq!(m.unmatched_gt, vec![0; 3]);
    }

    #[test]
    fn duplicate_prediction_is_fp() {
        let m = match_detections(&[pred(0.6, 0.5, 0), pred(0.9, 0.51, 0)], &[gt(0.5)], &[0.5]);
        assert_eq!(m.tp[0], vec![false, true]);
    }

    #[test]
    fn class_mismatch_is_fp() {
        let m = match_detections(&[pred(0.9, 0.5, 1)], &[gt(0.5)], &[0.5]);
        assert_eq!(m.tp[0], vec![false]);
        assert_eq!(m.unmatched_gt, vec![1]);
    }
}
