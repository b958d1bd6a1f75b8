//! Elementwise activations and the binary cross-entropy loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn leaky_relu(input: &Tensor, slope: f32) -> Tensor {
    let mut out = input.clone();
    out.clear_grad();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
    out
}

/// Gradient through `leaky_relu`, evaluated at the pre-activation `input`.
pub fn leaky_relu_backward(grad_out: &Tensor, input: &Tensor, slope: f32) -> Result<Tensor> {
    same_shape("leaky_relu_backward", grad_out, input)?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x < 0.0 { g * slope } else { g })
        .collect();
    Tensor::new(input.shape(), data)
}

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.clear_grad();
    out.data_mut().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    out
}

/// Gradient through `sigmoid`, given its forward `output`.
pub fn sigmoid_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    same_shape("sigmoid_backward", grad_out, output)?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &s)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape(), data)
}

/// Per-element `max(x,0) - x*t + ln(1 + e^{-|x|})`.
#[inline]
pub fn bce_logit_scalar(x: f32, t: f32) -> f32 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of `logits` against `targets`, as a one-element tensor.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_targets(logits, targets)?;
    let sum: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &t)| bce_logit_scalar(x, t) as f64)
        .sum();
    Ok(Tensor::scalar((sum / logits.numel() as f64) as f32))
}

/// Gradient of the mean BCE with respect to the logits, scaled by the upstream scalar.
pub fn bce_with_logits_backward(grad_out: f32, logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_targets(logits, targets)?;
    let scale = grad_out / logits.numel() as f32;
    let data = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &t)| (sigmoid_scalar(x) - t) * scale)
        .collect();
    Tensor::new(logits.shape(), data)
}

fn check_targets(logits: &Tensor, targets: &Tensor) -> Result<()> {
    same_shape("bce_with_logits", logits, targets)?;
    if let Some(t) = targets.data().iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid("bce target", format!("{t} is outside [0, 1]")));
    }
    Ok(())
}

fn same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        if a.rank() != b.rank() {
            return Err(Error::shape(context, "rank", a.rank(), b.rank()));
        }
        let axis = a.shape().iter().zip(b.shape()).position(|(x, y)| x != y).unwrap();
        return Err(Error::shape(
            context,
            format!("axis {axis}"),
            a.shape()[axis],
            b.shape()[axis],
        ));
    }
    Ok(())
}
