//! Grad-CAM++ attention maps over the penultimate feature layer.

use std::path::Path;

use crate::data::Image;
use crate::detector::{LayerStack, PENULTIMATE};
use crate::error::{Error, Result};
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Feature-map resolution.
    pub width: usize,
    pub height: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f32>,
    /// Nearest-neighbour upsampling to the input resolution.
    pub upsampled_width: usize,
    pub upsampled_height: usize,
    pub upsampled: Vec<f32>,
}

impl Heatmap {
    fn from_values(width: usize, height: usize, values: Vec<f32>, up_w: usize, up_h: usize) -> Self {
        let upsampled = (0..up_h)
            .flat_map(|y| {
                let values = &values;
                (0..up_w).map(move |x| values[(y * height / up_h) * width + x * width / up_w])
            })
            .collect();
        Heatmap {
            width,
            height,
            values,
            upsampled_width: up_w,
            upsampled_height: up_h,
            upsampled,
        }
    }

    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold(
                (0, f32::NEG_INFINITY),
                |best, (i, &v)| if v > best.1 { (i, v) } else { best },
            )
            .0
    }

    /// Value at a pixel of an image of arbitrary size, by nearest neighbour.
    pub fn sample(&self, x: usize, y: usize, img_w: usize, img_h: usize) -> f32 {
        self.values[(y * self.height / img_h) * self.width + x * self.width / img_w]
    }
}

/// Grad-CAM++ from activations `A` and gradients `dY/dA`, both `(1, K, H, W)`.
///
/// `alpha = g^2 / (2 g^2 + sum_ab(A) g^3)` (zero where the denominator is
/// zero), channel weight `w_k = sum_ij alpha * relu(g)`, map
/// `relu(sum_k w_k A_k)` min-max normalized per image.
pub fn grad_cam_pp_from(activations: &Tensor, grads: &Tensor, out_w: usize, out_h: usize) -> Result<Heatmap> {
    let (_, k, h, w) = activations.dims4()?;
    if grads.shape() != activations.shape() {
        return Err(Error::invalid(
            "grad-cam gradients",
            format!("{:?} vs {:?}", grads.shape(), activations.shape()),
        ));
    }
    let plane = h * w;
    let a = activations.data();
    let g = grads.data();
    let mut cam = vec![0.0f32; plane];
    for c in 0..k {
        let ac = &a[c * plane..(c + 1) * plane];
        let gc = &g[c * plane..(c + 1) * plane];
        let sum_a: f32 = ac.iter().sum();
        let mut weight = 0.0f32;
        for &gv in gc {
            let g2 = gv * gv;
            let denom = 2.0 * g2 + sum_a * g2 * gv;
            let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
            weight += alpha * gv.max(0.0);
        }
        for (m, &av) in cam.iter_mut().zip(ac) {
            *m += weight * av;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let (lo, hi) = cam
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    if hi - lo > 0.0 {
        cam.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        let fill = if hi > 0.0 { 1.0 } else { 0.0 };
        cam.iter_mut().for_each(|v| *v = fill);
    }
    Ok(Heatmap::from_values(w, h, cam, out_w, out_h))
}

/// Gradient of the detector's target score with respect to the head.
///
/// The score is the summed objectness probability of every cell/anchor whose
/// confidence reaches `conf_threshold`, or of all of them when none does.
pub fn target_score_grad(head: &Tensor, model: &LayerStack, conf_threshold: f32, scale: f32) -> Result<(f32, Tensor)> {
    let cfg = &model.config;
    let (n, _, g, _) = head.dims4()?;
    if n != 1 {
        return Err(Error::invalid("grad-cam input", format!("batch of {n}, expected 1")));
    }
    let plane = g * g;
    let x = head.data();
    let mut chosen = Vec::new();
    for a in 0..cfg.num_anchors() {
        let base = a * cfg.anchor_stride() * plane;
        for cell in 0..plane {
            let obj = sigmoid_scalar(x[base + 4 * plane + cell]);
            let cls = (0..cfg.num_classes)
                .map(|k| sigmoid_scalar(x[base + (5 + k) * plane + cell]))
                .fold(f32::NEG_INFINITY, f32::max);
            if obj * cls >= conf_threshold {
                chosen.push(base + 4 * plane + cell);
            }
        }
    }
    if chosen.is_empty() {
        chosen = (0..cfg.num_anchors())
            .flat_map(|a| {
                let base = a * cfg.anchor_stride() * plane + 4 * plane;
                (0..plane).map(move |c| base + c)
            })
            .collect();
    }
    let mut grad = Tensor::zeros(head.shape());
    let mut score = 0.0f32;
    for i in chosen {
        let s = sigmoid_scalar(x[i]);
        score += scale * s;
        grad.data_mut()[i] = scale * s * (1.0 - s);
    }
    Ok((score, grad))
}

/// Grad-CAM++ of `model` on a single stacked input `(1, 3n, S, S)`.
pub fn grad_cam_pp(model: &LayerStack, input: &Tensor, conf_threshold: f32) -> Result<Heatmap> {
    grad_cam_pp_scaled(model, input, conf_threshold, 1.0)
}

/// As [`grad_cam_pp`] with the target score multiplied by `scale`.
pub fn grad_cam_pp_scaled(model: &LayerStack, input: &Tensor, conf_threshold: f32, scale: f32) -> Result<Heatmap> {
    let (_, _, ih, iw) = input.dims4()?;
    let cache = model.forward_cached(input)?;
    let (_, grad_head) = target_score_grad(cache.head(), model, conf_threshold, scale)?;
    let head_index = model.layers.len() - 1;
    let pass = model.backward_to(&cache, &grad_head, head_index)?;
    grad_cam_pp_from(cache.activation(PENULTIMATE), &pass.input_grad, iw, ih)
}

/// Red-tinted overlay of `map` on the grayscale of `base`: the red channel
/// moves from gray toward 255 in proportion to the map, green and blue stay gray.
pub fn overlay(map: &Heatmap, base: &Image) -> Image {
    let mut out = Image::new(base.width, base.height);
    for y in 0..base.height {
        for x in 0..base.width {
            let [r, g, b] = base.pixel(x, y);
            let gray = (0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32)
                .round()
                .clamp(0.0, 255.0);
            let m = map.sample(x, y, base.width, base.height).clamp(0.0, 1.0);
            let red = (gray + m * (255.0 - gray)).round() as u8;
            out.set_pixel(x, y, [red, gray as u8, gray as u8]);
        }
    }
    out
}

pub fn export_heatmap(map: &Heatmap, base: &Image, path: &Path) -> Result<()> {
    overlay(map, base).write_ppm(path)
}
