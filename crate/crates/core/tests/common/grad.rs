//! Central finite-difference checks of the hand-written backward passes.

use mfdet::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use mfdet::data::dataset::parse_labels;
use mfdet::detector::{assign_targets, build_model, detection_loss, BoxLabel, LayerStack, ModelConfig};
use mfdet::ops::{
    bce_with_logits, bce_with_logits_backward, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward,
};
use mfdet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f32 = 1e-2;
pub const REL_TOL: f64 = 1e-2;
/// Largest tensor whose every element is probed.
pub const MAX_SIZE: usize = 256;

/// Through the whole f32 network the loss carries about 1e-6 of rounding
/// noise, i.e. 1e-4 on a difference quotient with step 1e-2.
const NETWORK_FLOOR: f64 = 5e-2;
const NETWORK_NOISE: f64 = 2e-3;

pub type Check = Result<(), String>;

/// Relative error; gradients smaller than `floor` are compared absolutely.
fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn weighted_sum(t: &Tensor, w: &Tensor) -> f64 {
    t.data().iter().zip(w.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn probe(x: &Tensor, i: usize, d: f32, f: &dyn Fn(&Tensor) -> f64) -> f64 {
    let mut p = x.clone();
    p.data_mut()[i] += d;
    f(&p)
}

/// Central difference of `f` with respect to element `i` of `x`.
fn central(x: &Tensor, i: usize, f: &dyn Fn(&Tensor) -> f64) -> f64 {
    (probe(x, i, STEP, f) - probe(x, i, -STEP, f)) / (2.0 * STEP as f64)
}

/// Central difference, or `None` when a kink lies inside the probe interval.
///
/// For a smooth function the second difference `D(a) = (f(x+a) - 2f(x) + f(x-a)) / a`
/// halves with `a`; a kink breaks that scaling. Two step pairs are checked
/// because each pair alone is blind at one kink offset. `noise` bounds the
/// rounding error of a second difference at the smallest step.
fn central_if_smooth(x: &Tensor, i: usize, floor: f64, noise: f64, f: &dyn Fn(&Tensor) -> f64) -> Option<f64> {
    let f0 = f(x);
    let second = |a: f32| (probe(x, i, a, f) - 2.0 * f0 + probe(x, i, -a, f)) / a as f64;
    let c = central(x, i, f);
    let scale = (REL_TOL * c.abs().max(floor)).max(noise);
    let (d1, d2, d4) = (second(STEP), second(STEP / 2.0), second(STEP / 4.0));
    ((d1 - 2.0 * d2).abs() <= scale && (d2 - 2.0 * d4).abs() <= scale).then_some(c)
}

/// Compares `analytic` with central differences on every element of `x`
/// that `skip` does not exclude.
fn check_all(
    what: &str,
    x: &Tensor,
    analytic: &Tensor,
    f: &dyn Fn(&Tensor) -> f64,
    skip: &dyn Fn(usize) -> bool,
) -> Check {
    for i in (0..x.numel()).filter(|&i| !skip(i)) {
        let numeric = central(x, i, f);
        let a = analytic.data()[i] as f64;
        if rel_err(a, numeric, 1e-2) >= REL_TOL {
            return Err(format!("{what} [{i}]: analytic {a} numeric {numeric}"));
        }
    }
    Ok(())
}

fn no_skip(_: usize) -> bool {
    false
}

/// Fails unless most probes were usable, so the smoothness filter cannot hide a broken gradient.
fn mostly_checked(what: &str, checked: usize, total: usize) -> Check {
    if checked * 4 + 4 >= total * 3 {
        Ok(())
    } else {
        Err(format!("{what}: only {checked} of {total} probes were smooth"))
    }
}

/// Convolution input, weight and bias gradients. Oversized draws are skipped.
pub fn conv(spec: &ConvSpec, hw: usize, batch: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[batch, spec.in_channels, hw, hw], 1.0, &mut rng);
    let w = Tensor::randn(&spec.weight_shape(), 0.5, &mut rng);
    let b = Tensor::randn(&[spec.out_channels], 0.5, &mut rng);
    if x.numel() > MAX_SIZE || w.numel() > MAX_SIZE {
        return Ok(());
    }
    let out = conv2d_forward(&x, &w, Some(&b), spec).map_err(|e| e.to_string())?;
    let upstream = Tensor::randn(out.shape(), 1.0, &mut rng);
    let g = conv2d_backward(&upstream, &x, &w, spec).map_err(|e| e.to_string())?;
    let fwd =
        |x: &Tensor, w: &Tensor, b: &Tensor| weighted_sum(&conv2d_forward(x, w, Some(b), spec).unwrap(), &upstream);
    check_all("conv input", &x, &g.input, &|xv| fwd(xv, &w, &b), &no_skip)?;
    check_all("conv weight", &w, &g.weight, &|wv| fwd(&x, wv, &b), &no_skip)?;
    check_all("conv bias", &b, &g.bias, &|bv| fwd(&x, &w, bv), &no_skip)
}

/// A random convolution geometry: groups 1-2, kernel 1 or 3, stride 1-2.
pub fn random_conv(rng: &mut ChaCha8Rng) -> (ConvSpec, usize, usize) {
    let groups = rng.gen_range(1..=2);
    let k = if rng.gen_bool(0.5) { 1 } else { 3 };
    let pad = if k == 1 { 0 } else { rng.gen_range(0..=1) };
    let spec = ConvSpec::new(
        groups * rng.gen_range(1..=3),
        groups * rng.gen_range(1..=2),
        k,
        rng.gen_range(1..=2),
        pad,
    )
    .with_groups(groups);
    (spec, rng.gen_range(3..=6), rng.gen_range(1..=2))
}

/// LeakyReLU; elements within one step of the kink at 0 are excluded.
pub fn leaky_relu_op(seed: u64, n: usize, slope: f32) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[n], 1.0, &mut rng);
    let up = Tensor::randn(&[n], 1.0, &mut rng);
    let g = leaky_relu_backward(&up, &x, slope).map_err(|e| e.to_string())?;
    check_all(
        "leaky relu",
        &x,
        &g,
        &|xv| weighted_sum(&leaky_relu(xv, slope), &up),
        &|i| x.data()[i].abs() <= STEP,
    )
}

pub fn sigmoid_op(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[n], 3.0, &mut rng);
    let up = Tensor::randn(&[n], 1.0, &mut rng);
    let g = sigmoid_backward(&up, &sigmoid(&x)).map_err(|e| e.to_string())?;
    check_all("sigmoid", &x, &g, &|xv| weighted_sum(&sigmoid(xv), &up), &no_skip)
}

pub fn bce_op(seed: u64, n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[n], 3.0, &mut rng);
    let t = Tensor::uniform(&[n], 0.0, 1.0, &mut rng);
    let g = bce_with_logits_backward(1.0, &x, &t).map_err(|e| e.to_string())?;
    check_all(
        "bce",
        &x,
        &g,
        &|xv| bce_with_logits(xv, &t).unwrap().data()[0] as f64,
        &no_skip,
    )
}

/// Detection loss with respect to the head output, for up to three random boxes.
pub fn detection_loss_op(seed: u64, count: usize) -> Check {
    let cfg = ModelConfig {
        input_size: 16,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<BoxLabel> = (0..count)
        .map(|_| {
            BoxLabel::new(
                0,
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.1..0.4),
                rng.gen_range(0.1..0.4),
            )
        })
        .collect();
    let targets = assign_targets(&labels, &cfg).map_err(|e| e.to_string())?;
    let head = Tensor::randn(targets.values.shape(), 1.0, &mut rng);
    let loss = detection_loss(&head, &targets, &cfg).map_err(|e| e.to_string())?;
    let f = |h: &Tensor| detection_loss(h, &targets, &cfg).unwrap().total as f64;
    let mut checked = 0;
    for i in 0..head.numel() {
        let Some(numeric) = central_if_smooth(&head, i, 1e-2, 0.0, &f) else {
            continue;
        };
        let a = loss.grad.data()[i] as f64;
        if rel_err(a, numeric, 1e-2) >= REL_TOL {
            return Err(format!("detection loss head [{i}]: analytic {a} numeric {numeric}"));
        }
        checked += 1;
    }
    mostly_checked("detection loss", checked, head.numel())
}

/// Signs of every activated pre-activation; a probe that flips one crosses a kink.
fn kink_pattern(m: &LayerStack, x: &Tensor) -> Vec<bool> {
    let cache = m.forward_cached(x).unwrap();
    m.layers
        .iter()
        .zip(&cache.pre_activations)
        .filter(|(l, _)| l.activation)
        .flat_map(|(_, p)| p.data().iter().map(|v| *v > 0.0).collect::<Vec<_>>())
        .collect()
}

/// End to end through a small network: parameter gradients of the detection loss.
pub fn model_parameters(seed: u64) -> Check {
    let cfg = ModelConfig {
        input_size: 8,
        base_width: 4,
        ..ModelConfig::default()
    };
    let model = build_model(&cfg, seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let x = Tensor::uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut rng);
    let targets = assign_targets(&parse_labels("0 0.4 0.6 0.3 0.25").unwrap(), &cfg).map_err(|e| e.to_string())?;
    let cache = model.forward_cached(&x).map_err(|e| e.to_string())?;
    let loss = detection_loss(cache.head(), &targets, &cfg).map_err(|e| e.to_string())?;
    let pass = model.backward_to(&cache, &loss.grad, 0).map_err(|e| e.to_string())?;
    let base_pattern = kink_pattern(&model, &x);

    let mut checked = 0;
    let mut total = 0;
    for (li, is_bias) in [(0usize, true), (2, false), (4, true), (4, false)] {
        let (gw, gb) = pass.params[li].as_ref().unwrap();
        let analytic = if is_bias { gb } else { gw };
        let numel = analytic.numel();
        for i in (0..numel).step_by(numel / 48 + 1) {
            total += 1;
            let perturbed = |d: f32| {
                let mut m = model.clone();
                let layer = &mut m.layers[li];
                let t = if is_bias { &mut layer.bias } else { &mut layer.weight };
                t.data_mut()[i] += d;
                m
            };
            if [STEP, -STEP, STEP / 2.0, -STEP / 2.0]
                .iter()
                .any(|&d| kink_pattern(&perturbed(d), &x) != base_pattern)
            {
                continue;
            }
            let f = |t: &Tensor| {
                let mut m = model.clone();
                let layer = &mut m.layers[li];
                *(if is_bias { &mut layer.bias } else { &mut layer.weight }) = t.clone();
                detection_loss(&m.forward(&x).unwrap(), &targets, &cfg).unwrap().total as f64
            };
            let layer = &model.layers[li];
            let Some(numeric) = central_if_smooth(
                if is_bias { &layer.bias } else { &layer.weight },
                i,
                NETWORK_FLOOR,
                NETWORK_NOISE,
                &f,
            ) else {
                continue;
            };
            let a = analytic.data()[i] as f64;
            if rel_err(a, numeric, NETWORK_FLOOR) >= REL_TOL {
                return Err(format!(
                    "layer {li} bias={is_bias} [{i}]: analytic {a} numeric {numeric}"
                ));
            }
            checked += 1;
        }
    }
    // small random networks sit close to many ReLU kinks; a third of the probes still leaves dozens checked
    if checked * 3 >= total {
        Ok(())
    } else {
        Err(format!("network: only {checked} of {total} probes were smooth"))
    }
}
