use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the first layer consumes a stack of frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    Single,
    EarlyFusion(usize),
    Grouped(usize),
}

impl FusionMode {
    pub fn frames(&self) -> usize {
        match *self {
            FusionMode::Single => 1,
            FusionMode::EarlyFusion(n) | FusionMode::Grouped(n) => n,
        }
    }

    pub fn input_channels(&self) -> usize {
        3 * self.frames()
    }

    pub fn is_single(&self) -> bool {
        matches!(self, FusionMode::Single)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Single => write!(f, "single"),
            FusionMode::EarlyFusion(n) => write!(f, "early_fusion:{n}"),
            FusionMode::Grouped(n) => write!(f, "grouped:{n}"),
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    /// Accepts `single`, `early_fusion:N` / `ef:N`, `grouped:N` / `group:N`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "single" {
            return Ok(FusionMode::Single);
        }
        let (kind, n) = s.split_once(':').ok_or_else(|| {
            Error::invalid(
                "fusion mode",
                format!("`{s}` (expected single, early_fusion:N or grouped:N)"),
            )
        })?;
        let n: usize = n
            .parse()
            .map_err(|_| Error::invalid("fusion mode", format!("frame count `{n}` is not an integer")))?;
        match kind {
            "early_fusion" | "ef" => Ok(FusionMode::EarlyFusion(n)),
            "grouped" | "group" => Ok(FusionMode::Grouped(n)),
            _ => Err(Error::invalid("fusion mode", format!("unknown kind `{kind}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub objectness: f32,
    pub class: f32,
    pub box_iou: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            objectness: 1.0,
            class: 1.0,
            box_iou: 5.0,
        }
    }
}

/// Total downsampling of the backbone; the head grid is `input_size / STRIDE`.
pub const STRIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub fusion_mode: FusionMode,
    pub base_width: usize,
    pub num_classes: usize,
    /// Anchor priors `(w, h)` in normalized image units.
    pub anchors: Vec<(f32, f32)>,
    pub leaky_slope: f32,
    pub loss_weights: LossWeights,
}

pub const DEFAULT_ANCHORS: [(f32, f32); 3] = [(0.08, 0.08), (0.16, 0.16), (0.3, 0.3)];

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            fusion_mode: FusionMode::Single,
            base_width: 32,
            num_classes: 1,
            anchors: DEFAULT_ANCHORS.to_vec(),
            leaky_slope: 0.1,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_mode(mut self, mode: FusionMode) -> Self {
        self.fusion_mode = mode;
        self
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    pub fn grid(&self) -> usize {
        self.input_size / STRIDE
    }

    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    /// Channels per anchor: box (4) + objectness (1) + classes.
    pub fn anchor_stride(&self) -> usize {
        5 + self.num_classes
    }

    pub fn head_channels(&self) -> usize {
        self.num_anchors() * self.anchor_stride()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("model config", reason));
        match self.fusion_mode {
            FusionMode::EarlyFusion(n) | FusionMode::Grouped(n) if n < 2 => {
                return bad(format!("{} needs at least 2 frames", self.fusion_mode));
            }
            _ => {}
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(STRIDE) {
            return bad(format!(
                "input size {} is not a positive multiple of {STRIDE}",
                self.input_size
            ));
        }
        if self.base_width == 0 {
            return bad("base width must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("at least one class is required".into());
        }
        if self.anchors.is_empty() {
            return bad("at least one anchor is required".into());
        }
        if let Some((w, h)) = self
            .anchors
            .iter()
            .find(|(w, h)| !(*w > 0.0 && *h > 0.0 && w.is_finite() && h.is_finite()))
        {
            return bad(format!("anchor ({w}, {h}) must have positive finite size"));
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky slope must be finite".into());
        }
        Ok(())
    }
}

/// A ground-truth box in normalized center format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxLabel {
    pub class_id: usize,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl BoxLabel {
    pub fn new(class_id: usize, cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BoxLabel { class_id, cx, cy, w, h }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.cx) || !(0.0..=1.0).contains(&self.cy) {
            return Err(format!("center ({}, {})", self.cx, self.cy));
        }
        if !(self.w > 0.0 && self.w <= 1.0 && self.h > 0.0 && self.h <= 1.0) {
            return Err(format!("size ({}, {})", self.w, self.h));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub confidence: f32,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_mode_round_trips_through_text() {
        for m in [FusionMode::Single, FusionMode::EarlyFusion(5), FusionMode::Grouped(3)] {
            assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
        }
        assert_eq!("ef:7".parse::<FusionMode>().unwrap(), FusionMode::EarlyFusion(7));
        assert!("tcn:3".parse::<FusionMode>().is_err());
        assert!("grouped:x".parse::<FusionMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::default()
            .with_mode(FusionMode::EarlyFusion(1))
            .validate()
            .is_err());
        assert!(ModelConfig::default().with_input_size(60).validate().is_err());
        let mut c = ModelConfig::default();
        c.anchors.clear();
        assert!(c.validate().is_err());
    }
}
