use super::config::{Detection, ModelConfig};
use super::loss::MAX_SIZE_LOGIT;
use crate::error::Result;
use crate::metrics::iou::{iou_unchecked, BBox};
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

const MIN_SIZE: f32 = 1e-6;

/// Decodes every batch item of a raw head into detections whose confidence
/// strictly exceeds `conf_threshold`, in (row, col, anchor) order.
pub fn decode_batch(head: &Tensor, config: &ModelConfig, conf_threshold: f32) -> Result<Vec<Vec<Detection>>> {
    let (n, _, g, _) = head.dims4()?;
    let plane = g * g;
    let gf = g as f32;
    let stride = config.anchor_stride();
    let x = head.data();
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let mut dets = Vec::new();
        for row in 0..g {
            for col in 0..g {
                let cell = row * g + col;
                for (a, &(aw, ah)) in config.anchors.iter().enumerate() {
                    let base = (b * config.head_channels() + a * stride) * plane + cell;
                    let v = |k: usize| x[base + k * plane];
                    let obj = sigmoid_scalar(v(4));
                    let (class_id, cls) = (0..config.num_classes).map(|k| (k, sigmoid_scalar(v(5 + k)))).fold(
                        (0, f32::NEG_INFINITY),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
                    let confidence = obj * cls;
                    if !(confidence > conf_threshold) {
                        continue;
                    }
                    dets.push(Detection {
                        class_id,
                        confidence,
                        cx: (col as f32 + sigmoid_scalar(v(0))) / gf,
                        cy: (row as f32 + sigmoid_scalar(v(1))) / gf,
                        w: (aw * v(2).min(MAX_SIZE_LOGIT).exp()).clamp(MIN_SIZE, 1.0),
                        h: (ah * v(3).min(MAX_SIZE_LOGIT).exp()).clamp(MIN_SIZE, 1.0),
                    });
                }
            }
        }
        out.push(dets);
    }
    Ok(out)
}

/// Decodes the first batch item.
pub fn decode(head: &Tensor, config: &ModelConfig, conf_threshold: f32) -> Result<Vec<Detection>> {
    let item = head.batch_item(0)?;
    Ok(decode_batch(&item, config, conf_threshold)?.pop().unwrap_or_default())
}

/// Greedy per-class non-maximum suppression.
///
/// Boxes are visited by descending confidence (ties: lower input index); a
/// box is dropped when its IoU with an already kept box of the same class
/// exceeds `iou_threshold`. The result keeps that visiting order.
pub fn nms(detections: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .confidence
            .total_cmp(&detections[i].confidence)
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let bi = BBox::from(&detections[i]);
        let suppressed = kept.iter().any(|&k| {
            detections[k].class_id == detections[i].class_id
                && iou_unchecked(&BBox::from(&detections[k]), &bi) > iou_threshold as f64
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| detections[i]).collect()
}
