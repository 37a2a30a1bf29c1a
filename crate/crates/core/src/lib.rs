//! Sequential latent-primitive prior for 4D human motion: training, duration-agnostic
//! decoding, evaluation harnesses and completion from sparse point clouds.

pub mod autodiff;
pub mod body;
pub mod completion;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod nn;
pub mod rotation;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MotionPriorF32 = model::MotionPrior<f32>;
pub type MotionPriorF64 = model::MotionPrior<f64>;
pub type FrameSequenceF32 = model::FrameSequence<f32>;
pub type FrameSequenceF64 = model::FrameSequence<f64>;
pub type InitEncoderF32 = completion::InitEncoder<f32>;
pub type InitEncoderF64 = completion::InitEncoder<f64>;
pub type PointCloudSequenceF32 = completion::PointCloudSequence<f32>;
pub type PointCloudSequenceF64 = completion::PointCloudSequence<f64>;
