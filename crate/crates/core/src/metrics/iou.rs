use crate::detector::{BoxLabel, Detection};
use crate::error::{Error, Result};

/// Axis-aligned box in corner form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

impl From<&Detection> for BBox {
    fn from(d: &Detection) -> Self {
        BBox::from_center(d.cx as f64, d.cy as f64, d.w as f64, d.h as f64)
    }
}

impl From<&BoxLabel> for BBox {
    fn from(l: &BoxLabel) -> Self {
        BBox::from_center(l.cx as f64, l.cy as f64, l.w as f64, l.h as f64)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for (name, bx) in [("first", a), ("second", b)] {
        if !(bx.width() > 0.0 && bx.height() > 0.0) {
            return Err(Error::invalid(
                "box",
                format!("{name} box has non-positive size {}x{}", bx.width(), bx.height()),
            ));
        }
    }
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_disjoint_and_corner() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let v = iou(&a, &BBox::new(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate() {
        let a = BBox::new(0.0, 0.0, 0.0, 2.0);
        assert!(iou(&a, &BBox::new(0.0, 0.0, 1.0, 1.0)).is_err());
    }
}
