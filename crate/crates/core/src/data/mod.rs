//! Synthetic video, frame-stack sampling and augmentation, dataset I/O.

pub mod dataset;
pub mod image;
pub mod presets;
pub mod sampling;
pub mod scene;
pub mod stack;

pub use dataset::{Dataset, DatasetMeta, Sequence};
pub use image::Image;
pub use presets::{generate, preset_script, GenerateParams, Preset};
pub use sampling::{resolve_offsets, SamplingSpec};
pub use scene::{render_sequence, Degradation, DegradationKind, ObjectSpec, SceneScript, ShapeKind, Trajectory};
pub use stack::{augment_stack, batch_tensor, build_stack, stack_to_tensor, AugmentParams, FrameStack};
