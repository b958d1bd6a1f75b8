//! Label-to-grid assignment.
//!
//! Each label goes to the cell containing its center and to the single anchor
//! whose shape overlaps it best. Target channels mirror the head layout:
//! per anchor `[tx, ty, tw, th, obj, class_0 .. class_C)`, where `tx, ty` are
//! the center offsets inside the cell and `tw, th` the log size ratios to the
//! anchor.

use super::config::{BoxLabel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// `(N, A*(5+C), G, G)`, same layout as the head.
    pub values: Tensor,
    /// Positive flag per `(batch, anchor, row, col)`, row-major.
    pub mask: Vec<bool>,
}

impl Targets {
    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_positive(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn stack(parts: &[Targets]) -> Result<Targets> {
        let values = Tensor::stack_batch(&parts.iter().map(|t| t.values.clone()).collect::<Vec<_>>())?;
        let mask = parts.iter().flat_map(|t| t.mask.iter().copied()).collect();
        Ok(Targets { values, mask })
    }
}

/// IoU of two boxes that share a center.
fn shape_iou(a: (f32, f32), b: (f32, f32)) -> f32 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

pub fn best_anchor(anchors: &[(f32, f32)], w: f32, h: f32) -> usize {
    let mut best = 0;
    let mut best_iou = f32::NEG_INFINITY;
    for (i, &a) in anchors.iter().enumerate() {
        let v = shape_iou(a, (w, h));
        if v > best_iou {
            best = i;
            best_iou = v;
        }
    }
    best
}

/// Grid placement of one label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
    /// `[tx, ty, tw, th]`.
    pub encoded: [f32; 4],
}

pub fn assign_label(label: &BoxLabel, config: &ModelConfig) -> Assignment {
    let g = config.grid();
    let gf = g as f32;
    let col = ((label.cx * gf).floor() as usize).min(g - 1);
    let row = ((label.cy * gf).floor() as usize).min(g - 1);
    let tx = label.cx * gf - col as f32;
    let ty = label.cy * gf - row as f32;
    let anchor = best_anchor(&config.anchors, label.w, label.h);
    let (aw, ah) = config.anchors[anchor];
    Assignment {
        row,
        col,
        anchor,
        encoded: [tx, ty, (label.w / aw).ln(), (label.h / ah).ln()],
    }
}

/// Builds the target grid for a single image.
///
/// When two labels land on the same cell and anchor, the earlier one wins.
pub fn assign_targets(labels: &[BoxLabel], config: &ModelConfig) -> Result<Targets> {
    let g = config.grid();
    let a_count = config.num_anchors();
    let stride = config.anchor_stride();
    let mut values = Tensor::zeros(&[1, config.head_channels(), g, g]);
    let mut mask = vec![false; a_count * g * g];
    for (index, label) in labels.iter().enumerate() {
        label
            .check()
            .map_err(|reason| Error::LabelOutOfRange { index, reason })?;
        if label.class_id >= config.num_classes {
            return Err(Error::LabelOutOfRange {
                index,
                reason: format!("class {} >= {}", label.class_id, config.num_classes),
            });
        }
        let asg = assign_label(label, config);
        let slot = (asg.anchor * g + asg.row) * g + asg.col;
        if mask[slot] {
            continue;
        }
        mask[slot] = true;
        let data = values.data_mut();
        let cell = asg.row * g + asg.col;
        let base = asg.anchor * stride;
        for (k, v) in asg.encoded.iter().enumerate() {
            data[(base + k) * g * g + cell] = *v;
        }
        data[(base + 4) * g * g + cell] = 1.0;
        data[(base + 5 + label.class_id) * g * g + cell] = 1.0;
    }
    Ok(Targets { values, mask })
}
