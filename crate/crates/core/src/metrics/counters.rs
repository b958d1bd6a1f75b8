//! Analytic parameter and FLOP counts. One multiply-add counts as two FLOPs;
//! only convolutions are counted.

use crate::conv::ConvSpec;
use crate::detector::LayerStack;

pub fn count_params(model: &LayerStack) -> u64 {
    model.layers.iter().map(|l| l.spec.param_count() as u64).sum()
}

/// FLOPs of one convolution producing an `ho x wo` map.
pub fn conv_flops(spec: &ConvSpec, ho: usize, wo: usize) -> u64 {
    let outputs = (ho * wo * spec.out_channels) as u64;
    let macs = outputs * (spec.in_per_group() * spec.kernel_h * spec.kernel_w) as u64;
    2 * macs + if spec.has_bias { outputs } else { 0 }
}

/// FLOPs of one forward pass on a square `input_size` image.
pub fn count_flops(model: &LayerStack, input_size: usize) -> u64 {
    let (mut h, mut w) = (input_size, input_size);
    let mut total = 0;
    for layer in &model.layers {
        let Some((ho, wo)) = layer.spec.output_hw(h, w) else {
            break;
        };
        total += conv_flops(&layer.spec, ho, wo);
        (h, w) = (ho, wo);
    }
    total
}
