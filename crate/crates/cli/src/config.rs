use std::path::{Path, PathBuf};

use motion_prior::completion::{CompletionConfig, InitTrainConfig};
use motion_prior::dataset::MotionKind;
use motion_prior::evaluation::{AblationArm, SweepConfig};
use motion_prior::model::{config_hash, ModelConfig};
use motion_prior::trainer::TrainConfig;
use motion_prior::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Loaded from `--config`, then overridden by
/// command-line flags; the hash of the final value is written into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of motion files used for training.
    pub data: Option<PathBuf>,
    /// Directory of held-out motion files.
    pub test_data: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Also train the initialization encoder after the prior.
    pub init: Option<InitTrainConfig>,
    pub completion: CompletionConfig,
    pub sweep: SweepConfig,
    /// Evaluation durations in seconds.
    pub durations: Vec<f64>,
    /// Ablation arms; empty means the default layout comparison built from `model`.
    pub ablation_arms: Vec<AblationArm>,
    pub ablation_seeds: Vec<u64>,
    /// Surface density used to produce dense observations.
    pub dense_samples_per_bone: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            test_data: None,
            out: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            init: None,
            completion: CompletionConfig::default(),
            sweep: SweepConfig::default(),
            durations: motion_prior::evaluation::duration_grid(0.2, 8.0, 0.2),
            ablation_arms: Vec::new(),
            ablation_seeds: vec![0, 1, 2],
            dense_samples_per_bone: InitTrainConfig::default().source_samples_per_bone,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        serde_json::from_str(&text).map_err(|e| parse_error(path, &e))
    }

    /// Applies `--seed` to every seeded component.
    pub fn reseed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        if let Some(init) = &mut self.init {
            init.seed = seed;
        }
        self.sweep.seed = seed;
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn parse_error(path: &Path, e: &serde_json::Error) -> Error {
    Error::Parse { source_name: path.display().to_string(), line: e.line(), column: e.column(), message: e.to_string() }
}

/// Input of `synth`: explicit specs or a kinds × shapes grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecFile {
    List(Vec<motion_prior::dataset::MotionSpec>),
    Grid(SpecGrid),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecGrid {
    pub kinds: Vec<MotionKind>,
    /// Number of random body shapes; every kind is generated for every shape.
    pub shapes: usize,
    pub duration: f64,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

fn default_fps() -> f64 {
    30.0
}
