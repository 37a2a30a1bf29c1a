use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture of the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of latent primitives.
    pub primitives: usize,
    /// Dimension of each latent primitive.
    pub latent_dim: usize,
    /// Width of the per-frame embedding before the timestamp is appended.
    pub embed_dim: usize,
    pub encoder_layers: usize,
    /// Query blocks that turn the encoded frames into one token per primitive.
    pub query_layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub feed_forward: usize,
    /// Hidden widths of the time-conditioned primitive decoder.
    pub primitive_hidden: Vec<usize>,
    /// Hidden widths of the time-independent segment head.
    pub segment_hidden: Vec<usize>,
    /// Sine/cosine pairs applied to segment-local time.
    pub time_frequencies: usize,
    pub joints: usize,
    pub shape_dims: usize,
    /// Freeze the segmentation at uniform durations.
    pub fixed_segments: bool,
    pub init_log_sigma: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            primitives: 8,
            latent_dim: 256,
            embed_dim: 127,
            encoder_layers: 4,
            query_layers: 1,
            heads: 8,
            head_dim: 16,
            feed_forward: 512,
            primitive_hidden: vec![256, 256, 256],
            segment_hidden: vec![128, 128],
            time_frequencies: 4,
            joints: 20,
            shape_dims: 8,
            fixed_segments: false,
            init_log_sigma: -1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on a CPU.
    pub fn tiny() -> Self {
        Self {
            primitives: 2,
            latent_dim: 16,
            embed_dim: 31,
            encoder_layers: 2,
            query_layers: 1,
            heads: 2,
            head_dim: 16,
            feed_forward: 64,
            primitive_hidden: vec![64, 64],
            segment_hidden: vec![32],
            ..Self::default()
        }
    }

    /// Values per frame: 6D rotation per joint plus the root displacement.
    pub fn frame_dim(&self) -> usize {
        6 * self.joints + 3
    }

    pub fn token_dim(&self) -> usize {
        self.embed_dim + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("primitives", self.primitives),
            ("latent_dim", self.latent_dim),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("feed_forward", self.feed_forward),
            ("joints", self.joints),
            ("shape_dims", self.shape_dims),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.primitive_hidden.is_empty() || self.primitive_hidden.contains(&0) {
            return Err(Error::InvalidConfig("primitive_hidden needs positive widths".into()));
        }
        if self.segment_hidden.contains(&0) {
            return Err(Error::InvalidConfig("segment_hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// First 16 hex digits of the SHA-256 of the JSON encoding.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}
