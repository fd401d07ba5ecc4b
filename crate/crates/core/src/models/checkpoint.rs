//! Checkpoint format: a TOML manifest next to a binary blob of named
//! parameter arrays (little-endian IEEE floats, offsets in the manifest).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::BlockConfig;
use crate::error::{CoreError, Result};
use crate::numerics::array::{numel, NdArray, Precision, Real};
use crate::numerics::params::ParamSet;
use crate::numerics::rng::RngState;

use super::arch::ArchitectureSpec;
use super::model::Model;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into params.bin.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub precision: Precision,
    pub trained_steps: u64,
    /// Sampler state at checkpoint time, for exact training resumption.
    pub rng_state: Option<RngState>,
    pub arch: ArchitectureSpec,
    pub block_config: BlockConfig,
    pub params: Vec<ParamEntry>,
}

/// Write `dir/manifest.toml` and `dir/params.bin`.
pub fn save_checkpoint<F: Real>(
    dir: &Path,
    model: &Model<F>,
    rng_state: Option<RngState>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    let mut entries = Vec::with_capacity(model.params.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, arr) in model.params.iter() {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: arr.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for &v in arr.data() {
            v.write_le(&mut blob);
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        precision: F::PRECISION,
        trained_steps: model.trained_steps,
        rng_state,
        arch: model.arch,
        block_config: model.block_cfg,
        params: entries,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Checkpoint(format!("manifest serialization: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), text)
        .map_err(|e| CoreError::io(dir.join(MANIFEST_FILE).display().to_string(), e))?;
    fs::write(dir.join(PARAMS_FILE), blob)
        .map_err(|e| CoreError::io(dir.join(PARAMS_FILE).display().to_string(), e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let manifest: CheckpointManifest =
        toml::from_str(&text).map_err(|e| CoreError::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

fn load_param_set<F: Real>(manifest: &CheckpointManifest, blob: &[u8]) -> Result<ParamSet<F>> {
    let mut pairs = Vec::with_capacity(manifest.params.len());
    for entry in &manifest.params {
        let count = numel(&entry.shape);
        let start = entry.offset as usize;
        let end = start + count * F::BYTES;
        if end > blob.len() {
            return Err(CoreError::Checkpoint(format!(
                "blob truncated: '{}' needs bytes {start}..{end}, blob has {}",
                entry.name,
                blob.len()
            )));
        }
        let data: Vec<F> = blob[start..end]
            .chunks_exact(F::BYTES)
            .map(F::read_le)
            .collect();
        pairs.push((entry.name.clone(), NdArray::from_vec(entry.shape.clone(), data)?));
    }
    Ok(ParamSet::from_arrays(pairs))
}

/// A loaded model at its stored precision.
pub enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl AnyModel {
    pub fn arch(&self) -> &ArchitectureSpec {
        match self {
            AnyModel::F32(m) => &m.arch,
            AnyModel::F64(m) => &m.arch,
        }
    }

    pub fn trained_steps(&self) -> u64 {
        match self {
            AnyModel::F32(m) => m.trained_steps,
            AnyModel::F64(m) => m.trained_steps,
        }
    }

    pub fn predict(&self, batch: &super::prompt::PromptBatch) -> Result<NdArray<f64>> {
        match self {
            AnyModel::F32(m) => m.predict(batch),
            AnyModel::F64(m) => m.predict(batch),
        }
    }
}

/// Load a checkpoint at its native precision.
pub fn load_checkpoint(dir: &Path) -> Result<AnyModel> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(PARAMS_FILE);
    let blob = fs::read(&path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    Ok(match manifest.precision {
        Precision::F32 => {
            let params = load_param_set::<f32>(&manifest, &blob)?;
            AnyModel::F32(Model::from_params(
                manifest.arch,
                manifest.block_config,
                params,
                manifest.trained_steps,
            ))
        }
        Precision::F64 => {
            let params = load_param_set::<f64>(&manifest, &blob)?;
            AnyModel::F64(Model::from_params(
                manifest.arch,
                manifest.block_config,
                params,
                manifest.trained_steps,
            ))
        }
    })
}

/// Load at a specific precision, failing on mismatch.
pub fn load_checkpoint_as<F: Real>(dir: &Path) -> Result<Model<F>> {
    let manifest = read_manifest(dir)?;
    if manifest.precision != F::PRECISION {
        return Err(CoreError::Checkpoint(format!(
            "checkpoint precision {} differs from requested {}",
            manifest.precision,
            F::PRECISION
        )));
    }
    let path = dir.join(PARAMS_FILE);
    let blob = fs::read(&path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let params = load_param_set::<F>(&manifest, &blob)?;
    Ok(Model::from_params(
        manifest.arch,
        manifest.block_config,
        params,
        manifest.trained_steps,
    ))
}
