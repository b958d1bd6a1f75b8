//! Multi-frame object detection by stacking consecutive video frames along
//! the channel axis of a compact single-scale detector.
//!
//! The crate bundles everything needed to reproduce the approach on a CPU:
//! a small NCHW tensor library with hand-written gradients, the detector,
//! weight surgery from single-frame to frame-stack models, a synthetic video
//! generator with controllable degradations, training, COCO-style evaluation
//! and Grad-CAM++ attention maps.

pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod introspect;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod surgery;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use tensor::Tensor;
