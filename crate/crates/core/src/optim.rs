use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted so a step can be a no-op
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "sgd learning rate",
                format!("{} must be non-negative", self.learning_rate),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                "sgd momentum",
                format!("{} is outside [0, 1)", self.momentum),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "sgd weight decay",
                format!("{} is negative", self.weight_decay),
            ));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum. Velocity buffers are keyed by parameter position.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn set_learning_rate(&mut self, lr: f32) {
        self.config.learning_rate = lr;
    }

    /// `v <- m*v + g (+ wd*p)`, `p <- p - lr*v`, then zeroes every gradient.
    ///
    /// Fails before touching any parameter if one of them lacks a gradient.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)]) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
            return Err(Error::MissingGradient(name.to_string()));
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        }
        let SgdConfig {
            learning_rate: lr,
            momentum: m,
            weight_decay: wd,
        } = self.config;
        for ((_, p), v) in params.iter_mut().zip(&mut self.velocity) {
            let g = p.grad().expect("checked above").to_vec();
            for ((x, vi), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = m * *vi + gi + wd * *x;
                *x -= lr * *vi;
            }
            p.zero_grad();
        }
        Ok(())
    }
}
