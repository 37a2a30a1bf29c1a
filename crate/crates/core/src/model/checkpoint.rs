//! Weight blob (little-endian f64) plus JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

use super::config::ModelConfig;
use super::prior::MotionPrior;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const NORMALIZATION_CONVENTION: &str =
    "per-sequence per-axis affine map of root displacement to [-1,1]; timestamps affinely mapped to [0,1]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta<C> {
    pub format_version: u32,
    pub kind: String,
    pub config: C,
    pub config_hash: String,
    pub normalization: String,
    pub tensors: Vec<TensorEntry>,
    /// Producing command line and config hash.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

/// Sidecar path for a weight blob: `model.bin` pairs with `model.json`.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

pub(crate) fn write_params<T: Scalar, C: Serialize>(
    blob: &Path,
    kind: &str,
    config: &C,
    params: &ParamStore<T>,
    provenance: &[String],
) -> Result<()> {
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: kind.to_string(),
        config,
        config_hash: super::config::config_hash(config),
        normalization: NORMALIZATION_CONVENTION.to_string(),
        tensors: params
            .names()
            .iter()
            .zip(params.shapes())
            .map(|(name, (rows, cols))| TensorEntry { name: name.clone(), rows, cols })
            .collect(),
        provenance: provenance.to_vec(),
    };
    let bytes: Vec<u8> = params.flatten().iter().flat_map(|v| v.as_f64().to_le_bytes()).collect();
    if let Some(dir) = blob.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| error::Error::io(dir, e))?;
    }
    fs::write(blob, bytes).map_err(|e| error::Error::io(blob, e))?;
    let side = sidecar_path(blob);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| error::Error::json(side.display().to_string(), e))?;
    fs::write(&side, json).map_err(|e| error::Error::io(&side, e))
}

pub(crate) fn read_meta<C: for<'de> Deserialize<'de>>(blob: &Path, kind: &str) -> Result<CheckpointMeta<C>> {
    let side = sidecar_path(blob);
    let text = fs::read_to_string(&side).map_err(|e| error::Error::io(&side, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| error::Error::json(side.display().to_string(), e))?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0);
    if version != u64::from(CHECKPOINT_FORMAT_VERSION) {
        return Err(Error::SchemaVersionMismatch(format!("checkpoint format {version}, expected {CHECKPOINT_FORMAT_VERSION}")));
    }
    let meta: CheckpointMeta<C> = serde_json::from_value(raw).map_err(|e| error::Error::json(side.display().to_string(), e))?;
    if meta.kind != kind {
        return Err(Error::InvalidConfig(format!("checkpoint holds a {}, expected a {kind}", meta.kind)));
    }
    Ok(meta)
}

pub(crate) fn read_params<T: Scalar, C>(blob: &Path, meta: &CheckpointMeta<C>, params: &mut ParamStore<T>) -> Result<()> {
    let expected: Vec<TensorEntry> = params
        .names()
        .iter()
        .zip(params.shapes())
        .map(|(name, (rows, cols))| TensorEntry { name: name.clone(), rows, cols })
        .collect();
    if expected != meta.tensors {
        return Err(Error::InvalidConfig("checkpoint tensors do not match the configured architecture".into()));
    }
    let bytes = fs::read(blob).map_err(|e| error::Error::io(blob, e))?;
    if bytes.len() != 8 * params.num_scalars() {
        return Err(Error::LengthMismatch(format!(
            "weight blob has {} bytes, expected {}",
            bytes.len(),
            8 * params.num_scalars()
        )));
    }
    let values: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    params.load_flat(&values);
    Ok(())
}

const PRIOR_KIND: &str = "motion_prior";

impl<T: Scalar> MotionPrior<T> {
    /// Writes the weight blob and its JSON sidecar; `provenance` lines go into the sidecar.
    pub fn save(&self, blob: impl AsRef<Path>, provenance: &[String]) -> Result<()> {
        write_params(blob.as_ref(), PRIOR_KIND, &self.config, &self.params, provenance)
    }

    pub fn load(blob: impl AsRef<Path>) -> Result<Self> {
        let blob = blob.as_ref();
        let meta: CheckpointMeta<ModelConfig> = read_meta(blob, PRIOR_KIND)?;
        let mut prior = Self::new(meta.config.clone())?;
        read_params(blob, &meta, &mut prior.params)?;
        Ok(prior)
    }
}
