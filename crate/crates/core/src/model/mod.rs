//! The latent-primitive prior: encoder, temporally implicit decoder and checkpoints.

mod checkpoint;
mod config;
pub mod ops;
mod prior;
mod types;

pub use checkpoint::{sidecar_path, CheckpointMeta, TensorEntry, CHECKPOINT_FORMAT_VERSION, NORMALIZATION_CONVENTION};
pub(crate) use checkpoint::{read_meta, read_params, write_params};
pub use config::{config_hash, ModelConfig};
pub use ops::{gaussian_mask, layout, sample};
pub use prior::{DecodedVars, EncodedVars, MotionPrior};
pub use types::{BodyParams, FrameSequence, LatentDistributionSequence, LatentSequence, SegmentLayout};
