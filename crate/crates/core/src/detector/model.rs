//! The five-layer micro-detector and its forward/backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FusionMode, ModelConfig};
use crate::conv::{conv2d_backward, conv2d_forward, ConvSpec};
use crate::error::{Error, Result};
use crate::ops::{leaky_relu, leaky_relu_backward};
use crate::tensor::Tensor;

/// Objectness prior of the untrained head, `logit(0.01)`.
const OBJECTNESS_PRIOR: f32 = -4.595_12;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: bool,
}

impl Layer {
    pub fn zeros(name: &str, spec: ConvSpec, activation: bool) -> Self {
        Layer {
            name: name.to_string(),
            spec,
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: Tensor::zeros(&[spec.out_channels]),
            activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
}

pub const LAYER_NAMES: [&str; 5] = ["l1", "l2", "l3", "l4", "head"];

/// Index of the penultimate (last feature) layer.
pub const PENULTIMATE: usize = 3;

/// The fixed layer specs for `config`:
/// `l1 k3s2 -> l2 k3s2 64 -> l3 k3s1 64 -> l4 k3s2 128 -> head k1`.
pub fn architecture(config: &ModelConfig) -> Vec<(ConvSpec, bool)> {
    let n_base = config.base_width;
    let (l1, l2_in) = match config.fusion_mode {
        FusionMode::Single => (ConvSpec::new(3, n_base, 3, 2, 1), n_base),
        FusionMode::EarlyFusion(n) => (ConvSpec::new(3 * n, n_base, 3, 2, 1), n_base),
        FusionMode::Grouped(n) => (ConvSpec::new(3 * n, n_base * n, 3, 2, 1).with_groups(n), n_base * n),
    };
    vec![
        (l1, true),
        (ConvSpec::new(l2_in, 64, 3, 2, 1), true),
        (ConvSpec::new(64, 64, 3, 1, 1), true),
        (ConvSpec::new(64, 128, 3, 2, 1), true),
        (ConvSpec::new(128, config.head_channels(), 1, 1, 0), false),
    ]
}

pub fn build_model(config: &ModelConfig, seed: u64) -> Result<LayerStack> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for ((spec, act), name) in architecture(config).into_iter().zip(LAYER_NAMES) {
        let fan_in = spec.in_per_group() * spec.kernel_h * spec.kernel_w;
        let gain = if act {
            2.0 / (1.0 + config.leaky_slope * config.leaky_slope)
        } else {
            1.0
        };
        let std = (gain / fan_in as f32).sqrt();
        let mut layer = Layer::zeros(name, spec, act);
        layer.weight = Tensor::randn(&spec.weight_shape(), std, &mut rng);
        if name == "head" {
            let stride = config.anchor_stride();
            for a in 0..config.num_anchors() {
                layer.bias.data_mut()[a * stride + 4] = OBJECTNESS_PRIOR;
            }
        }
        layers.push(layer);
    }
    Ok(LayerStack {
        config: config.clone(),
        layers,
    })
}

/// Activations saved by [`LayerStack::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of each layer; `inputs[i + 1]` is the activated output of layer `i`.
    pub inputs: Vec<Tensor>,
    /// Pre-activation output of each layer.
    pub pre_activations: Vec<Tensor>,
}

impl ForwardCache {
    pub fn head(&self) -> &Tensor {
        self.pre_activations.last().expect("non-empty cache")
    }

    /// Activated output of layer `i`.
    pub fn activation(&self, i: usize) -> &Tensor {
        &self.inputs[i + 1]
    }
}

/// Per-layer parameter gradients plus the gradient at the lowest layer reached.
#[derive(Clone, Debug)]
pub struct Backward {
    /// `(weight, bias)` gradients indexed like `layers`; `None` for layers not reached.
    pub params: Vec<Option<(Tensor, Tensor)>>,
    /// Gradient with respect to the input of the lowest layer reached.
    pub input_grad: Tensor,
}

impl LayerStack {
    pub fn from_layers(config: ModelConfig, layers: Vec<Layer>) -> Self {
        LayerStack { config, layers }
    }

    pub fn mode(&self) -> FusionMode {
        self.config.fusion_mode
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn expected_input_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.in_channels)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (_, c, _, _) = input.dims4()?;
        let expected = self.expected_input_channels();
        if c != expected {
            return Err(Error::ChannelMismatch {
                mode: self.config.fusion_mode.to_string(),
                expected,
                actual: c,
            });
        }
        Ok(())
    }

    /// Raw head output `(N, A*(5+C), G, G)`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let slope = self.config.leaky_slope;
        let mut x = input.clone();
        for layer in &self.layers {
            let y = conv2d_forward(&x, &layer.weight, Some(&layer.bias), &layer.spec)?;
            x = if layer.activation { leaky_relu(&y, slope) } else { y };
        }
        Ok(x)
    }

    /// Output of layer `index` before its activation.
    pub fn forward_pre_activation(&self, input: &Tensor, index: usize) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = conv2d_forward(&x, &layer.weight, Some(&layer.bias), &layer.spec)?;
            if i == index {
                return Ok(y);
            }
            x = if layer.activation {
                leaky_relu(&y, self.config.leaky_slope)
            } else {
                y
            };
        }
        Err(Error::invalid(
            "layer index",
            format!("{index} >= {}", self.layers.len()),
        ))
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache> {
        self.check_input(input)?;
        let slope = self.config.leaky_slope;
        let mut inputs = vec![input.clone()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = inputs.last().unwrap();
            let y = conv2d_forward(x, &layer.weight, Some(&layer.bias), &layer.spec)?;
            if layer.activation {
                inputs.push(leaky_relu(&y, slope));
            } else {
                inputs.push(y.clone());
            }
            pre_activations.push(y);
        }
        inputs.pop();
        Ok(ForwardCache {
            inputs,
            pre_activations,
        })
    }

    /// Back-propagates `grad_head` from the head down to layer `stop_at`.
    pub fn backward_to(&self, cache: &ForwardCache, grad_head: &Tensor, stop_at: usize) -> Result<Backward> {
        if grad_head.shape() != cache.head().shape() {
            return Err(Error::invalid(
                "head gradient",
                format!(
                    "shape {:?} differs from head {:?}",
                    grad_head.shape(),
                    cache.head().shape()
                ),
            ));
        }
        let mut params = vec![None; self.layers.len()];
        let mut g = grad_head.clone();
        for i in (stop_at..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if layer.activation {
                g = leaky_relu_backward(&g, &cache.pre_activations[i], self.config.leaky_slope)?;
            }
            let grads = conv2d_backward(&g, &cache.inputs[i], &layer.weight, &layer.spec)?;
            params[i] = Some((grads.weight, grads.bias));
            g = grads.input;
        }
        Ok(Backward { params, input_grad: g })
    }

    /// Full backward pass, accumulating parameter gradients into each tensor.
    pub fn backward(&mut self, cache: &ForwardCache, grad_head: &Tensor) -> Result<()> {
        let pass = self.backward_to(cache, grad_head, 0)?;
        for (layer, grads) in self.layers.iter_mut().zip(pass.params) {
            let (gw, gb) = grads.expect("all layers reached");
            layer.weight.accumulate_grad(gw.data())?;
            layer.bias.accumulate_grad(gb.data())?;
        }
        Ok(())
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push((format!("{}.weight", layer.name), &mut layer.weight));
            out.push((format!("{}.bias", layer.name), &mut layer.bias));
        }
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push((format!("{}.weight", layer.name), &layer.weight));
            out.push((format!("{}.bias", layer.name), &layer.bias));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.weight.zero_grad();
            layer.bias.zero_grad();
        }
    }

    /// Sets every weight and bias to zero.
    pub fn zeroed(mut self) -> Self {
        for layer in &mut self.layers {
            layer.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            layer.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }
}
