//! Spatio-temporal completion of sparse point-cloud sequences through the prior.

mod cloud;
mod init;
mod solve;

pub use cloud::{
    chamfer, downsample, load_point_clouds, save_point_clouds, surface_chamfer, surface_sequence, CloudManifest, FrameEncoding,
    PointCloudSequence, CLOUD_FORMAT_VERSION, MM_PER_M,
};
pub use init::{
    estimate_normalization, observe_window, rest_centroid_offset, train_init_encoder, CloudFeatures, InitEncoder, InitEncoderConfig,
    InitEpochRecord, InitTrainConfig, ObservedWindow,
};
pub use solve::{complete, complete_from, decode_metric, output_times, CompletionConfig, CompletionProblem, CompletionResult, ObjectiveEval};
