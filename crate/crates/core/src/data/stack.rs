//! Frame stacks: the unit of input for the detector.
//!
//! A stack holds `n` frames (oldest first) and the labels of the newest frame
//! only. Earlier frames never contribute supervision.

use rand::Rng;

use super::image::Image;
use super::sampling::{resolve_offsets, SamplingSpec};
use crate::detector::BoxLabel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub frames: Vec<Image>,
    pub offsets: Vec<i64>,
    /// Labels of the target (offset 0) frame.
    pub labels: Vec<BoxLabel>,
    pub sequence_id: String,
    pub target_index: usize,
}

/// Assembles the stack for target frame `t`. Offsets reaching before the
/// sequence start repeat frame 0.
pub fn build_stack(
    frames: &[Image],
    labels: &[Vec<BoxLabel>],
    t: usize,
    spec: &SamplingSpec,
    sequence_id: &str,
) -> Result<FrameStack> {
    if t >= frames.len() {
        return Err(Error::invalid(
            "target frame",
            format!("index {t} is outside a sequence of {} frames", frames.len()),
        ));
    }
    let offsets = resolve_offsets(spec)?;
    let picked = offsets
        .iter()
        .map(|&o| frames[(t as i64 + o).max(0) as usize].clone())
        .collect();
    Ok(FrameStack {
        frames: picked,
        offsets,
        labels: labels.get(t).cloned().unwrap_or_default(),
        sequence_id: sequence_id.to_string(),
        target_index: t,
    })
}

/// Geometric augmentation drawn once per stack and applied to every frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Translation as a fraction of the image size.
    pub translate: (f32, f32),
    /// Zoom about the image center.
    pub scale: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        translate: (0.0, 0.0),
        scale: 1.0,
    };

    /// Flip with probability 1/2, translation in `±max_translate`, scale in `1 ± max_scale`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_translate: f32, max_scale: f32) -> Self {
        let flip = rng.gen_bool(0.5);
        let mut u = |m: f32| if m > 0.0 { rng.gen_range(-m..m) } else { 0.0 };
        let translate = (u(max_translate), u(max_translate));
        let scale = 1.0 + u(max_scale);
        AugmentParams { flip, translate, scale }
    }

    /// Forward map of a normalized coordinate pair.
    fn map(&self, u: f64, v: f64) -> (f64, f64) {
        let u = if self.flip { 1.0 - u } else { u };
        let s = self.scale as f64;
        (
            (u - 0.5) * s + 0.5 + self.translate.0 as f64,
            (v - 0.5) * s + 0.5 + self.translate.1 as f64,
        )
    }

    /// Inverse map; `None` when the source falls outside the unit square.
    fn unmap(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.scale as f64;
        let u0 = (u - self.translate.0 as f64 - 0.5) / s + 0.5;
        let v0 = (v - self.translate.1 as f64 - 0.5) / s + 0.5;
        (if self.flip { 1.0 - u0 } else { u0 }, v0)
    }
}

/// Fill value for pixels that come from outside the source frame.
pub const PAD_VALUE: u8 = 114;

/// Share of a transformed box that must remain inside the image.
pub const MIN_KEPT_AREA: f32 = 0.1;

fn warp(img: &Image, p: &AugmentParams) -> Image {
    let (w, h) = (img.width, img.height);
    let mut out = Image::filled(w, h, [PAD_VALUE; 3]);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = p.unmap((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let sx = (u * w as f64).floor();
            let sy = (v * h as f64).floor();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.set_pixel(x, y, img.pixel(sx as usize, sy as usize));
            }
        }
    }
    out
}

fn transform_label(l: &BoxLabel, p: &AugmentParams) -> Option<BoxLabel> {
    let (cx, cy) = p.map(l.cx as f64, l.cy as f64);
    let s = p.scale as f64;
    let (w, h) = (l.w as f64 * s, l.h as f64 * s);
    let (x1, x2) = ((cx - w / 2.0).max(0.0), (cx + w / 2.0).min(1.0));
    let (y1, y2) = ((cy - h / 2.0).max(0.0), (cy + h / 2.0).min(1.0));
    let kept = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    if kept <= 0.0 || kept < MIN_KEPT_AREA as f64 * w * h {
        return None;
    }
    if x1 == cx - w / 2.0 && x2 == cx + w / 2.0 && y1 == cy - h / 2.0 && y2 == cy + h / 2.0 {
        return Some(BoxLabel::new(l.class_id, cx as f32, cy as f32, w as f32, h as f32));
    }
    Some(BoxLabel::new(
        l.class_id,
        ((x1 + x2) / 2.0) as f32,
        ((y1 + y2) / 2.0) as f32,
        (x2 - x1) as f32,
        (y2 - y1) as f32,
    ))
}

pub fn augment_stack(stack: &FrameStack, params: &AugmentParams) -> FrameStack {
    if *params == AugmentParams::IDENTITY {
        return stack.clone();
    }
    FrameStack {
        frames: stack.frames.iter().map(|f| warp(f, params)).collect(),
        labels: stack.labels.iter().filter_map(|l| transform_label(l, params)).collect(),
        ..stack.clone()
    }
}

/// `(1, 3n, H, W)` tensor: frame-major, oldest first, RGB planes, values in `[0, 1]`.
pub fn stack_to_tensor(stack: &FrameStack) -> Result<Tensor> {
    let first = stack
        .frames
        .first()
        .ok_or_else(|| Error::invalid("frame stack", "no frames"))?;
    let (w, h) = (first.width, first.height);
    let plane = w * h;
    let mut data = vec![0.0f32; stack.frames.len() * 3 * plane];
    for (fi, frame) in stack.frames.iter().enumerate() {
        if frame.width != w || frame.height != h {
            return Err(Error::invalid(
                "frame stack",
                format!("frame {fi} is {}x{}, expected {w}x{h}", frame.width, frame.height),
            ));
        }
        for (i, px) in frame.data.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                data[(fi * 3 + ch) * plane + i] = px[ch] as f32 / 255.0;
            }
        }
    }
    Tensor::new(&[1, 3 * stack.frames.len(), h, w], data)
}

pub fn batch_tensor(stacks: &[FrameStack]) -> Result<Tensor> {
    let parts = stacks.iter().map(stack_to_tensor).collect::<Result<Vec<_>>>()?;
    Tensor::stack_batch(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<Image> {
        (0..n).map(|i| Image::filled(4, 3, [i as u8, 0, 0])).collect()
    }

    fn labels(n: usize) -> Vec<Vec<BoxLabel>> {
        (0..n)
            .map(|i| vec![BoxLabel::new(0, 0.5, 0.5, 0.1 + 0.01 * i as f32, 0.1)])
            .collect()
    }

    #[test]
    fn start_of_sequence_is_clamped() {
        let s = build_stack(&frames(12), &labels(12), 0, &SamplingSpec::Adjacent { n: 3 }, "a").unwrap();
        assert!(s.frames.iter().all(|f| f.data[0] == 0));
        assert_eq!(s.offsets, vec![-2, -1, 0]);
    }

    #[test]
    fn stepped_picks_frames() {
        let s = build_stack(
            &frames(12),
            &labels(12),
            10,
            &SamplingSpec::Stepped { n: 3, step: 3 },
            "a",
        )
        .unwrap();
        let picked: Vec<u8> = s.frames.iter().map(|f| f.data[0]).collect();
        assert_eq!(picked, vec![4, 7, 10]);
        assert_eq!(s.labels, labels(12)[10]);
        assert!(build_stack(&frames(12), &labels(12), 12, &SamplingSpec::Adjacent { n: 1 }, "a").is_err());
    }

    #[test]
    fn single_frame_degenerate() {
        let f = frames(5);
        let s = build_stack(&f, &labels(5), 3, &SamplingSpec::Adjacent { n: 1 }, "a").unwrap();
        assert_eq!(s.frames, vec![f[3].clone()]);
        assert_eq!(stack_to_tensor(&s).unwrap().shape(), &[1, 3, 3, 4]);
    }

    #[test]
    fn tensor_layout_is_frame_major() {
        let mut f = frames(5);
        f[4].set_pixel(1, 2, [255, 51, 102]);
        let s = build_stack(&f, &labels(5), 4, &SamplingSpec::Adjacent { n: 5 }, "a").unwrap();
        let t = stack_to_tensor(&s).unwrap();
        assert_eq!(t.shape(), &[1, 15, 3, 4]);
        let plane = 12;
        let at = |c: usize| t.data()[c * plane + 2 * 4 + 1];
        assert_eq!((at(12), at(13), at(14)), (1.0, 0.2, 0.4));
        assert_eq!(t.data()[9 * plane], 3.0 / 255.0);
    }

    #[test]
    fn identity_augment_is_noop() {
        let s = build_stack(&frames(3), &labels(3), 2, &SamplingSpec::Adjacent { n: 2 }, "a").unwrap();
        assert_eq!(augment_stack(&s, &AugmentParams::IDENTITY), s);
        let near = AugmentParams {
            scale: 1.0 + 1e-9,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(augment_stack(&s, &near).frames, s.frames);
    }

    #[test]
    fn flip_mirrors_pixels_and_labels() {
        let mut img = Image::new(4, 2);
        img.set_pixel(0, 1, [9, 9, 9]);
        let stack = FrameStack {
            frames: vec![img.clone(), img],
            offsets: vec![-1, 0],
            labels: vec![BoxLabel::new(0, 0.2, 0.5, 0.2, 0.2)],
            sequence_id: "s".into(),
            target_index: 1,
        };
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::IDENTITY
        };
        let f = augment_stack(&stack, &p);
        for fr in &f.frames {
            assert_eq!(fr.pixel(3, 1), [9, 9, 9]);
            assert_eq!(fr.pixel(0, 1), [0, 0, 0]);
        }
        assert!((f.labels[0].cx - 0.8).abs() < 1e-6);
    }

    #[test]
    fn translated_box_clipped_or_dropped() {
        let stack = FrameStack {
            frames: vec![Image::new(8, 8)],
            offsets: vec![0],
            labels: vec![BoxLabel::new(0, 0.5, 0.5, 0.1, 0.1)],
            sequence_id: "s".into(),
            target_index: 0,
        };
        let p = AugmentParams {
            translate: (0.5, 0.0),
            ..AugmentParams::IDENTITY
        };
        // center moves to 1.0: half of the box survives
        let out = augment_stack(&stack, &p);
        assert_eq!(out.labels.len(), 1);
        assert!((out.labels[0].cx - 0.975).abs() < 1e-6 && (out.labels[0].w - 0.05).abs() < 1e-6);
        let p = AugmentParams {
            translate: (0.549, 0.0),
            ..AugmentParams::IDENTITY
        };
        assert!(augment_stack(&stack, &p).labels.is_empty());
    }

    #[test]
    fn inconsistent_sizes_rejected() {
        let stack = FrameStack {
            frames: vec![Image::new(4, 4), Image::new(4, 3)],
            offsets: vec![-1, 0],
            labels: vec![],
            sequence_id: "s".into(),
            target_index: 1,
        };
        assert!(stack_to_tensor(&stack).is_err());
    }
}
