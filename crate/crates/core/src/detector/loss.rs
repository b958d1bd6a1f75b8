//! Objectness / class / box loss with its analytic gradient.

use super::config::ModelConfig;
use super::target::Targets;
use crate::error::{Error, Result};
use crate::ops::{bce_logit_scalar, sigmoid_scalar};
use crate::tensor::Tensor;

/// Upper bound on the size logits before `exp`; beyond it the box stops growing.
pub const MAX_SIZE_LOGIT: f32 = 6.0;

#[derive(Clone, Debug)]
pub struct DetectionLoss {
    pub total: f32,
    pub objectness: f32,
    pub class: f32,
    pub boxes: f32,
    /// d(total)/d(head), same shape as the head.
    pub grad: Tensor,
}

/// Decoded box `(cx, cy, w, h)` in grid-cell units and its partials
/// with respect to the four raw logits.
struct BoxDecode {
    b: [f32; 4],
    d: [f32; 4],
}

fn decode_box(raw: [f32; 4], anchor: (f32, f32), row: usize, col: usize, g: f32) -> BoxDecode {
    let sx = sigmoid_scalar(raw[0]);
    let sy = sigmoid_scalar(raw[1]);
    let (tw, dw_mask) = if raw[2] > MAX_SIZE_LOGIT {
        (MAX_SIZE_LOGIT, 0.0)
    } else {
        (raw[2], 1.0)
    };
    let (th, dh_mask) = if raw[3] > MAX_SIZE_LOGIT {
        (MAX_SIZE_LOGIT, 0.0)
    } else {
        (raw[3], 1.0)
    };
    let w = anchor.0 * tw.exp();
    let h = anchor.1 * th.exp();
    BoxDecode {
        b: [(col as f32 + sx) / g, (row as f32 + sy) / g, w, h],
        d: [sx * (1.0 - sx) / g, sy * (1.0 - sy) / g, w * dw_mask, h * dh_mask],
    }
}

/// IoU of two center-format boxes and its gradient with respect to the first.
pub(crate) fn iou_with_grad(p: [f32; 4], t: [f32; 4]) -> (f32, [f32; 4]) {
    let (px1, px2) = (p[0] - p[2] / 2.0, p[0] + p[2] / 2.0);
    let (py1, py2) = (p[1] - p[3] / 2.0, p[1] + p[3] / 2.0);
    let (tx1, tx2) = (t[0] - t[2] / 2.0, t[0] + t[2] / 2.0);
    let (ty1, ty2) = (t[1] - t[3] / 2.0, t[1] + t[3] / 2.0);
    let iw = px2.min(tx2) - px1.max(tx1);
    let ih = py2.min(ty2) - py1.max(ty1);
    if iw <= 0.0 || ih <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let inter = iw * ih;
    let union = p[2] * p[3] + t[2] * t[3] - inter;
    let iou = inter / union;

    // which edges of the intersection belong to the prediction
    let right = if px2 < tx2 { 1.0 } else { 0.0 };
    let left = if px1 > tx1 { 1.0 } else { 0.0 };
    let bottom = if py2 < ty2 { 1.0 } else { 0.0 };
    let top = if py1 > ty1 { 1.0 } else { 0.0 };
    let diw_dcx = right - left;
    let diw_dw = 0.5 * (right + left);
    let dih_dcy = bottom - top;
    let dih_dh = 0.5 * (bottom + top);

    let d_inter = (union + inter) / (union * union);
    let d_area = -inter / (union * union);
    let grad = [
        d_inter * ih * diw_dcx,
        d_inter * iw * dih_dcy,
        d_inter * ih * diw_dw + d_area * p[3],
        d_inter * iw * dih_dh + d_area * p[2],
    ];
    (iou, grad)
}

/// `lambda_obj * BCE(obj, all cells) + lambda_cls * BCE(class, positives)
/// + lambda_box * mean(1 - IoU, positives)`.
pub fn detection_loss(head: &Tensor, targets: &Targets, config: &ModelConfig) -> Result<DetectionLoss> {
    if !head.is_finite() {
        return Err(Error::NonFinite("detection head".into()));
    }
    if head.shape() != targets.values.shape() {
        return Err(Error::invalid(
            "detection loss",
            format!("head {:?} vs targets {:?}", head.shape(), targets.values.shape()),
        ));
    }
    let (n, _, g, _) = head.dims4()?;
    let a_count = config.num_anchors();
    let stride = config.anchor_stride();
    let c = config.num_classes;
    let plane = g * g;
    let gf = g as f32;
    let w = config.loss_weights;

    let x = head.data();
    let t = targets.values.data();
    let mut grad = vec![0.0f32; head.numel()];

    let n_cells = (n * a_count * plane) as f32;
    let n_pos = targets.num_positive();

    let mut obj_sum = 0.0f64;
    let mut cls_sum = 0.0f64;
    let mut box_sum = 0.0f64;
    let obj_scale = w.objectness / n_cells;
    let cls_scale = if n_pos > 0 { w.class / (n_pos * c) as f32 } else { 0.0 };
    let box_scale = if n_pos > 0 { w.box_iou / n_pos as f32 } else { 0.0 };

    for b in 0..n {
        for a in 0..a_count {
            let base = (b * config.head_channels() + a * stride) * plane;
            let at = |k: usize, cell: usize| base + k * plane + cell;
            for cell in 0..plane {
                let positive = targets.mask[(b * a_count + a) * plane + cell];
                let oi = at(4, cell);
                let target_obj = if positive { 1.0 } else { 0.0 };
                obj_sum += bce_logit_scalar(x[oi], target_obj) as f64;
                grad[oi] = (sigmoid_scalar(x[oi]) - target_obj) * obj_scale;
                if !positive {
                    continue;
                }
                for k in 0..c {
                    let ci = at(5 + k, cell);
                    cls_sum += bce_logit_scalar(x[ci], t[ci]) as f64;
                    grad[ci] = (sigmoid_scalar(x[ci]) - t[ci]) * cls_scale;
                }
                let (row, col) = (cell / g, cell % g);
                let anchor = config.anchors[a];
                let raw = [x[at(0, cell)], x[at(1, cell)], x[at(2, cell)], x[at(3, cell)]];
                let pred = decode_box(raw, anchor, row, col, gf);
                let target = [
                    (col as f32 + t[at(0, cell)]) / gf,
                    (row as f32 + t[at(1, cell)]) / gf,
                    anchor.0 * t[at(2, cell)].exp(),
                    anchor.1 * t[at(3, cell)].exp(),
                ];
                let (iou, d_iou) = iou_with_grad(pred.b, target);
                box_sum += (1.0 - iou).max(0.0) as f64;
                for k in 0..4 {
                    grad[at(k, cell)] = -box_scale * d_iou[k] * pred.d[k];
                }
            }
        }
    }

    let objectness = (obj_sum / n_cells as f64) as f32;
    let class = if n_pos > 0 {
        (cls_sum / (n_pos * c) as f64) as f32
    } else {
        0.0
    };
    let boxes = if n_pos > 0 {
        (box_sum / n_pos as f64) as f32
    } else {
        0.0
    };
    let total = w.objectness * objectness + w.class * class + w.box_iou * boxes;
    if !total.is_finite() {
        return Err(Error::NonFinite("detection loss".into()));
    }
    Ok(DetectionLoss {
        total,
        objectness,
        class,
        boxes,
        grad: Tensor::new(head.shape(), grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::config::BoxLabel;
    use crate::detector::target::{assign_label, assign_targets};

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_size: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn no_positives_zero_logits_is_ln2() {
        let c = cfg();
        let t = assign_targets(&[], &c).unwrap();
        let head = Tensor::zeros(t.values.shape());
        let l = detection_loss(&head, &t, &c).unwrap();
        assert!((l.total - c.loss_weights.objectness * std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(l.class, 0.0);
        assert_eq!(l.boxes, 0.0);
    }

    #[test]
    fn saturated_perfect_logits_vanish() {
        let c = cfg();
        let labels = [
            BoxLabel::new(0, 0.3, 0.4, 0.1, 0.12),
            BoxLabel::new(0, 0.8, 0.7, 0.25, 0.3),
        ];
        let t = assign_targets(&labels, &c).unwrap();
        let g = c.grid();
        let plane = g * g;
        let mut head = Tensor::full(t.values.shape(), 0.0);
        {
            let stride = c.anchor_stride();
            let h = head.data_mut();
            for a in 0..c.num_anchors() {
                for cell in 0..plane {
                    h[(a * stride + 4) * plane + cell] = -30.0;
                }
            }
            for l in &labels {
                let asg = assign_label(l, &c);
                let cell = asg.row * g + asg.col;
                let base = asg.anchor * stride;
                let logit = |p: f32| (p / (1.0 - p)).ln();
                h[base * plane + cell] = logit(asg.encoded[0]);
                h[(base + 1) * plane + cell] = logit(asg.encoded[1]);
                h[(base + 2) * plane + cell] = asg.encoded[2];
                h[(base + 3) * plane + cell] = asg.encoded[3];
                h[(base + 4) * plane + cell] = 30.0;
                h[(base + 5) * plane + cell] = 30.0;
            }
        }
        let l = detection_loss(&head, &t, &c).unwrap();
        assert!(l.total < 1e-3, "{l:?}");
        assert!(l.total >= 0.0);
    }

    #[test]
    fn nan_head_is_an_error() {
        let c = cfg();
        let t = assign_targets(&[], &c).unwrap();
        let mut head = Tensor::zeros(t.values.shape());
        head.data_mut()[3] = f32::NAN;
        assert!(matches!(detection_loss(&head, &t, &c), Err(Error::NonFinite(_))));
    }

    #[test]
    fn iou_grad_matches_difference_quotient() {
        let p = [0.5f32, 0.45, 0.3, 0.22];
        let t = [0.55f32, 0.5, 0.25, 0.3];
        let (_, g) = iou_with_grad(p, t);
        for k in 0..4 {
            let h = 1e-3;
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let fd = (iou_with_grad(hi, t).0 - iou_with_grad(lo, t).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 2e-3, "k={k} fd={fd} an={}", g[k]);
        }
    }
}
