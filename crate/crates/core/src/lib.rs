//! Training-free video object segmentation orchestration.
//!
//! The pipeline picks keyframe candidates from motion cues, asks a grounding
//! backend and a segmentation backend to score them, fuses the two confidences
//! to choose one keyframe, and propagates that keyframe's mask through the
//! whole sequence with a tracker backend, once toward the first frame and once
//! toward the last.
//!
//! All perception lives behind the traits in [`backend`]. Deterministic
//! in-process stubs and a small HTTP transport ship with the crate so every
//! stage can be exercised on synthetic scenes with analytic ground truth.

pub mod ablation;
pub mod backend;
pub mod encoder;
pub mod evaluation;
pub mod frame_store;
pub mod keyframe;
pub mod memory;
pub mod pipeline;
pub mod propagation;
pub mod sampler;

pub use backend::{BackendError, Backends, Direction, Grounder, Segmenter, Tracker};
pub use encoder::{EncoderConfig, FeatureMap};
pub use evaluation::MetricsReport;
pub use frame_store::{
    BoundingBox, FrameSequence, Image, MaskFrame, MaskSequence, ObjectId, SyntheticScene,
};
pub use keyframe::{FusionConfig, KeyframeDecision};
pub use pipeline::{PipelineConfig, PipelineError, PipelineOutput};
pub use sampler::{CandidateSet, SamplerConfig, SamplingStrategy};
