//! Dataset-level evaluation: P/R at an operating point, AP@0.5 and AP@[.5:.95].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::ap::average_precision;
use super::counters::{count_flops, count_params};
use super::latency::LatencyStats;
use super::matching::{coco_thresholds, match_detections};
use crate::data::{stack_to_tensor, FrameStack};
use crate::detector::{decode, nms, BoxLabel, Detection, LayerStack};
use crate::error::Result;

/// Decoding floor used when collecting detections for AP.
pub const MAP_CONF_FLOOR: f32 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map5095: f64,
    /// AP at each of the ten IoU thresholds, per evaluated class.
    pub per_class_ap: BTreeMap<usize, Vec<f64>>,
    pub params: u64,
    pub flops: u64,
    pub latency: Option<LatencyStats>,
}

/// Anything that turns a frame stack into detections.
pub trait Detect {
    fn detect(&self, stack: &FrameStack) -> Result<Vec<Detection>>;
}

/// A trained model plus its post-processing.
pub struct ModelDetector<'a> {
    pub model: &'a LayerStack,
    pub conf_floor: f32,
    pub nms_iou: f32,
}

impl<'a> ModelDetector<'a> {
    pub fn new(model: &'a LayerStack, nms_iou: f32) -> Self {
        ModelDetector {
            model,
            conf_floor: MAP_CONF_FLOOR,
            nms_iou,
        }
    }
}

impl Detect for ModelDetector<'_> {
    fn detect(&self, stack: &FrameStack) -> Result<Vec<Detection>> {
        let input = stack_to_tensor(stack)?;
        let head = self.model.forward(&input)?;
        let dets = decode(&head, &self.model.config, self.conf_floor)?;
        Ok(nms(&dets, self.nms_iou))
    }
}

impl ModelDetector<'_> {
    /// Detections above an operating threshold, as drawn by prediction tools.
    pub fn detect_at(&self, stack: &FrameStack, conf_threshold: f32) -> Result<Vec<Detection>> {
        let mut dets = self.detect(stack)?;
        dets.retain(|d| d.confidence > conf_threshold);
        Ok(dets)
    }
}

/// Replays the ground truth as confidence-1 detections.
pub struct OracleDetector;

impl Detect for OracleDetector {
    fn detect(&self, stack: &FrameStack) -> Result<Vec<Detection>> {
        Ok(stack
            .labels
            .iter()
            .map(|l| Detection {
                class_id: l.class_id,
                confidence: 1.0,
                cx: l.cx,
                cy: l.cy,
                w: l.w,
                h: l.h,
            })
            .collect())
    }
}

/// Scores per-image detections against ground truth.
///
/// P and R count predictions with confidence strictly above `conf_threshold`
/// at IoU 0.5. mAP averages over classes that have ground truth or
/// predictions; if there are none at all, every AP is 1.
pub fn score_detections(images: &[(Vec<Detection>, Vec<BoxLabel>)], conf_threshold: f32) -> EvalReport {
    let thresholds = coco_thresholds();
    // class -> per-threshold list of (confidence, tp)
    let mut scored: BTreeMap<usize, Vec<Vec<(f32, bool)>>> = BTreeMap::new();
    let mut num_gt: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut tp_at, mut pred_at, mut gt_total) = (0usize, 0usize, 0usize);

    for (preds, gts) in images {
        for g in gts {
            *num_gt.entry(g.class_id).or_default() += 1;
        }
        gt_total += gts.len();
        let m = match_detections(preds, gts, &thresholds);
        for (i, p) in preds.iter().enumerate() {
            let per_t = scored
                .entry(p.class_id)
                .or_insert_with(|| vec![Vec::new(); thresholds.len()]);
            for (t, list) in per_t.iter_mut().enumerate() {
                list.push((p.confidence, m.tp[t][i]));
            }
            if p.confidence > conf_threshold {
                pred_at += 1;
                if m.tp[0][i] {
                    tp_at += 1;
                }
            }
        }
    }

    let classes: Vec<usize> = num_gt
        .keys()
        .chain(scored.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut per_class_ap = BTreeMap::new();
    for &c in &classes {
        let n = num_gt.get(&c).copied().unwrap_or(0);
        let aps = (0..thresholds.len())
            .map(|t| {
                let list = scored.get(&c).map(|l| l[t].as_slice()).unwrap_or(&[]);
                average_precision(list, n)
            })
            .collect::<Vec<_>>();
        per_class_ap.insert(c, aps);
    }
    let (map50, map5095) = if per_class_ap.is_empty() {
        (1.0, 1.0)
    } else {
        let k = per_class_ap.len() as f64;
        (
            per_class_ap.values().map(|a| a[0]).sum::<f64>() / k,
            per_class_ap
                .values()
                .map(|a| a.iter().sum::<f64>() / a.len() as f64)
                .sum::<f64>()
                / k,
        )
    };
    EvalReport {
        precision: if pred_at > 0 {
            tp_at as f64 / pred_at as f64
        } else {
            0.0
        },
        recall: if gt_total > 0 {
            tp_at as f64 / gt_total as f64
        } else {
            0.0
        },
        map50,
        map5095,
        per_class_ap,
        params: 0,
        flops: 0,
        latency: None,
    }
}

/// Runs `detector` over every stack and scores the result.
pub fn evaluate_with(detector: &dyn Detect, stacks: &[FrameStack], conf_threshold: f32) -> Result<EvalReport> {
    let mut images = Vec::with_capacity(stacks.len());
    for s in stacks {
        images.push((detector.detect(s)?, s.labels.clone()));
    }
    Ok(score_detections(&images, conf_threshold))
}

pub fn evaluate(model: &LayerStack, stacks: &[FrameStack], conf_threshold: f32, nms_iou: f32) -> Result<EvalReport> {
    if stacks.is_empty() {
        return Err(crate::error::Error::invalid("evaluation", "dataset has no stacks"));
    }
    let mut report = evaluate_with(&ModelDetector::new(model, nms_iou), stacks, conf_threshold)?;
    report.params = count_params(model);
    report.flops = count_flops(model, model.config.input_size);
    Ok(report)
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "config,precision,recall,map50,map5095,params,flops,latency_mean_ms,latency_median_ms,latency_p95_ms";

    pub fn csv_row(&self, name: &str) -> String {
        let lat = |f: fn(&LatencyStats) -> f64| {
            self.latency
                .as_ref()
                .map(|l| format!("{:.4}", f(l)))
                .unwrap_or_default()
        };
        format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
            self.precision,
            self.recall,
            self.map50,
            self.map5095,
            self.params,
            self.flops,
            lat(|l| l.mean_ms),
            lat(|l| l.median_ms),
            lat(|l| l.p95_ms)
        )
    }
}

/// Fixed-width text table of named reports.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>7} {:>7} {:>7} {:>10} {:>10} {:>12} {:>10}",
        "config", "P", "R", "mAP50", "mAP50-95", "params", "FLOPs", "median ms"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<20} {:>7.3} {:>7.3} {:>7.3} {:>10.3} {:>10} {:>12} {:>10}",
            name,
            r.precision,
            r.recall,
            r.map50,
            r.map5095,
            r.params,
            r.flops,
            r.latency
                .as_ref()
                .map(|l| format!("{:.3}", l.median_ms))
                .unwrap_or_else(|| "-".into())
        );
    }
    out
}
