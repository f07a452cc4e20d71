//! Motion-capture ingestion, normalization and rotation conversions.

pub mod dataset;
mod frames;
pub mod rotation;
mod stats;
pub mod synth;

pub use dataset::{Clip, Corpus, Dataset, Manifest};
pub use frames::{FrameMatrix, RawTrial, FRAME_PERIOD_MS};
pub use stats::{MotionSequence, NormalizationStats, DEFAULT_CONST_EPSILON, DEFAULT_GLOBAL_DIMS};
