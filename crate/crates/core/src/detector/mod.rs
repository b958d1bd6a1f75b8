//! Compact single-scale anchor-based detector.

pub mod anchors;
pub mod config;
pub mod decode;
pub mod loss;
pub mod model;
pub mod target;

pub use anchors::fit_anchors;
pub use config::{BoxLabel, Detection, FusionMode, LossWeights, ModelConfig, STRIDE};
pub use decode::{decode, decode_batch, nms};
pub use loss::{detection_loss, DetectionLoss};
pub use model::{build_model, ForwardCache, Layer, LayerStack, PENULTIMATE};
pub use target::{assign_label, assign_targets, Assignment, Targets};
