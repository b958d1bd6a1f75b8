//! Browser bindings: render synthetic frame stacks, check weight surgery and
//! compare model costs, all in the page.

use mfdet::data::{build_stack, preset_script, render_sequence, GenerateParams, SamplingSpec};
use mfdet::detector::{build_model, FusionMode, ModelConfig};
use mfdet::metrics::{count_flops, count_params};
use mfdet::surgery::{verify_equivalence, SurgeryMode, SurgeryPlan};
use wasm_bindgen::prelude::*;

/// Renders the frame stack ending at frame `t` of a generated sequence and
/// returns it as one RGBA strip, oldest frame on the left.
///
/// Target-frame boxes are outlined on the rightmost frame.
pub fn stack_strip(
    preset: &str,
    seed: u64,
    size: usize,
    t: usize,
    frames: usize,
    step: usize,
) -> Result<Strip, String> {
    let params = GenerateParams {
        preset: preset.parse().map_err(|e: mfdet::Error| e.to_string())?,
        seed,
        width: size,
        height: size,
        ..GenerateParams::default()
    };
    let script = preset_script(&params, 0);
    let seq = render_sequence(&script).map_err(|e| e.to_string())?;
    let spec = if step <= 1 {
        SamplingSpec::Adjacent { n: frames }
    } else {
        SamplingSpec::Stepped { n: frames, step }
    };
    let t = t.min(seq.frames.len() - 1);
    let stack = build_stack(&seq.frames, &seq.labels, t, &spec, "000").map_err(|e| e.to_string())?;
    let mut images = stack.frames.clone();
    if let Some(last) = images.last_mut() {
        for l in &stack.labels {
            last.draw_box(l.cx, l.cy, l.w, l.h, [255, 255, 255]);
        }
    }
    let (w, h) = (size * images.len(), size);
    let mut rgba = vec![0u8; w * h * 4];
    for (i, img) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..size {
                let [r, g, b] = img.pixel(x, y);
                let o = (y * w + i * size + x) * 4;
                rgba[o..o + 4].copy_from_slice(&[r, g, b, 255]);
            }
        }
    }
    Ok(Strip {
        width: w,
        height: h,
        rgba,
        labels: stack.labels.len(),
    })
}

#[wasm_bindgen]
pub struct Strip {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    labels: usize,
}

#[wasm_bindgen]
impl Strip {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

#[wasm_bindgen]
pub fn render_stack(
    preset: &str,
    seed: u32,
    size: usize,
    t: usize,
    frames: usize,
    step: usize,
) -> Result<Strip, JsError> {
    stack_strip(preset, seed as u64, size, t, frames, step).map_err(|e| JsError::new(&e))
}

/// Largest output deviation between a random single-frame model and its
/// `n`-frame adaptation on identical-frame stacks.
pub fn surgery_check(grouped: bool, n: usize, trials: usize, seed: u64) -> Result<f32, String> {
    let source = build_model(&ModelConfig::default().with_input_size(32), seed).map_err(|e| e.to_string())?;
    let mode = if grouped {
        SurgeryMode::Grouped
    } else {
        SurgeryMode::EarlyFusion
    };
    let adapted = SurgeryPlan {
        mode,
        source: &source,
        n,
    }
    .apply()
    .map_err(|e| e.to_string())?;
    let report = verify_equivalence(&adapted, &source, n, trials, 1e-4, seed).map_err(|e| e.to_string())?;
    Ok(report.max_abs_deviation)
}

#[wasm_bindgen]
pub fn surgery_deviation(grouped: bool, n: usize, trials: usize, seed: u32) -> Result<f32, JsError> {
    surgery_check(grouped, n, trials, seed as u64).map_err(|e| JsError::new(&e))
}

/// CSV of parameters and FLOPs for single, early-fusion and grouped models
/// with 2..=`max_frames` frames.
pub fn cost_csv(max_frames: usize, input_size: usize) -> Result<String, String> {
    let mut modes = vec![FusionMode::Single];
    for n in 2..=max_frames {
        modes.push(FusionMode::EarlyFusion(n));
        modes.push(FusionMode::Grouped(n));
    }
    let mut csv = String::from("config,params,flops\n");
    for mode in modes {
        let model = build_model(&ModelConfig::default().with_input_size(input_size).with_mode(mode), 0)
            .map_err(|e| e.to_string())?;
        csv.push_str(&format!(
            "{mode},{},{}\n",
            count_params(&model),
            count_flops(&model, input_size)
        ));
    }
    Ok(csv)
}

#[wasm_bindgen]
pub fn cost_table(max_frames: usize, input_size: usize) -> Result<String, JsError> {
    cost_csv(max_frames, input_size).map_err(|e| JsError::new(&e))
}
