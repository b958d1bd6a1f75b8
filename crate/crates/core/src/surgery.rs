//! Weight surgery from a single-frame detector to a frame-stack detector.
//!
//! Both schemes keep the network's response unchanged when every frame in
//! the stack is identical:
//!
//! * early fusion tiles the first-layer kernel `n` times along its input
//!   channels and divides it by `n`;
//! * grouped fusion copies the first layer into `n` groups (one per frame)
//!   and tiles the second-layer kernel `n` times along its input channels,
//!   divided by `n`, so it averages the per-frame feature maps.
//!
//! The stacked input is frame-major, oldest frame first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detector::{FusionMode, Layer, LayerStack};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurgeryMode {
    EarlyFusion,
    Grouped,
}

#[derive(Clone, Debug)]
pub struct SurgeryPlan<'a> {
    pub mode: SurgeryMode,
    pub source: &'a LayerStack,
    pub n: usize,
}

impl SurgeryPlan<'_> {
    pub fn apply(&self) -> Result<LayerStack> {
        match self.mode {
            SurgeryMode::EarlyFusion => adapt_early_fusion(self.source, self.n),
            SurgeryMode::Grouped => adapt_grouped(self.source, self.n),
        }
    }
}

fn check_source(source: &LayerStack, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("surgery", "frame count must be at least 1"));
    }
    if !source.config.fusion_mode.is_single() {
        return Err(Error::invalid(
            "surgery source",
            format!("model is already {}", source.config.fusion_mode),
        ));
    }
    if source.layers.len() < 2 {
        return Err(Error::invalid("surgery source", "needs at least two layers"));
    }
    let l1 = &source.layers[0].spec;
    if l1.in_channels != 3 || l1.groups != 1 {
        return Err(Error::invalid(
            "surgery source",
            format!(
                "first layer has {} input channels in {} groups",
                l1.in_channels, l1.groups
            ),
        ));
    }
    Ok(())
}

/// Repeats `weight` `n` times along axis 1 (input channels), scaled by `1/n`.
fn tile_input_channels(weight: &Tensor, n: usize) -> Result<Tensor> {
    let [cout, cin, kh, kw]: [usize; 4] = weight
        .shape()
        .try_into()
        .map_err(|_| Error::shape("tile_input_channels", "rank", 4, weight.rank()))?;
    let k = kh * kw;
    let scale = 1.0 / n as f32;
    let src = weight.data();
    let mut out = Vec::with_capacity(weight.numel() * n);
    for o in 0..cout {
        let row = &src[o * cin * k..(o + 1) * cin * k];
        for _ in 0..n {
            out.extend(row.iter().map(|v| v * scale));
        }
    }
    Tensor::new(&[cout, cin * n, kh, kw], out)
}

pub fn adapt_early_fusion(source: &LayerStack, n: usize) -> Result<LayerStack> {
    check_source(source, n)?;
    if n == 1 {
        return Ok(source.clone());
    }
    let mut adapted = source.clone();
    adapted.config.fusion_mode = FusionMode::EarlyFusion(n);
    let l1 = &mut adapted.layers[0];
    l1.weight = tile_input_channels(&source.layers[0].weight, n)?;
    l1.spec.in_channels = 3 * n;
    Ok(adapted)
}

pub fn adapt_grouped(source: &LayerStack, n: usize) -> Result<LayerStack> {
    check_source(source, n)?;
    if n == 1 {
        return Ok(source.clone());
    }
    let src_l1 = &source.layers[0];
    let src_l2 = &source.layers[1];
    let mut adapted = source.clone();
    adapted.config.fusion_mode = FusionMode::Grouped(n);

    let mut spec = src_l1.spec;
    spec.in_channels = 3 * n;
    spec.out_channels = src_l1.spec.out_channels * n;
    spec.groups = n;
    let weight: Vec<f32> = (0..n).flat_map(|_| src_l1.weight.data().iter().copied()).collect();
    let bias: Vec<f32> = (0..n).flat_map(|_| src_l1.bias.data().iter().copied()).collect();
    adapted.layers[0] = Layer {
        name: src_l1.name.clone(),
        spec,
        weight: Tensor::new(&spec.weight_shape(), weight)?,
        bias: Tensor::new(&[spec.out_channels], bias)?,
        activation: src_l1.activation,
    };

    let l2 = &mut adapted.layers[1];
    l2.weight = tile_input_channels(&src_l2.weight, n)?;
    l2.spec.in_channels = src_l2.spec.in_channels * n;
    Ok(adapted)
}

/// Builds an `n`-frame stack tensor `(1, 3n, h, w)` from one frame `(1, 3, h, w)`.
pub fn repeat_frame(frame: &Tensor, n: usize) -> Result<Tensor> {
    let (b, c, h, w) = frame.dims4()?;
    if b != 1 || c != 3 {
        return Err(Error::invalid(
            "frame",
            format!("expected (1, 3, h, w), got {:?}", frame.shape()),
        ));
    }
    let data: Vec<f32> = (0..n).flat_map(|_| frame.data().iter().copied()).collect();
    Tensor::new(&[1, 3 * n, h, w], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub max_abs_deviation: f32,
    pub tolerance: f32,
    pub passed: bool,
}

/// Compares the adapted network on identical-frame stacks with the source
/// network on the single frame, over `trials` random frames drawn from `seed`.
pub fn verify_equivalence(
    adapted: &LayerStack,
    source: &LayerStack,
    n: usize,
    trials: usize,
    tolerance: f32,
    seed: u64,
) -> Result<EquivalenceReport> {
    let s = source.config.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f32;
    for _ in 0..trials {
        let frame = Tensor::uniform(&[1, 3, s, s], 0.0, 1.0, &mut rng);
        let expected = source.forward(&frame)?;
        let got = adapted.forward(&repeat_frame(&frame, n)?)?;
        worst = worst.max(got.max_abs_diff(&expected)?);
    }
    Ok(EquivalenceReport {
        trials,
        max_abs_deviation: worst,
        tolerance,
        passed: worst < tolerance,
    })
}
