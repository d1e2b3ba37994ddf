use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{param_shapes, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{io, Scalar};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    /// Parameter name to file name, relative to the checkpoint directory.
    pub tensors: BTreeMap<String, String>,
    pub train_step: u64,
    pub val_loss: Option<f64>,
}

/// Writes one `.mmst` file per parameter plus `manifest.json` into `dir`.
pub fn save_checkpoint<T: Scalar>(
    dir: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParams<T>,
    train_step: u64,
    val_loss: Option<f64>,
) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    params.check_shapes(config)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = BTreeMap::new();
    for (name, tensor) in params.named() {
        let file = format!("{name}.mmst");
        io::write_tensor(dir.join(&file), tensor)?;
        tensors.insert(name, file);
    }
    let manifest = CheckpointManifest {
        config: config.clone(),
        tensors,
        train_step,
        val_loss,
    };
    io::write_json(dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint<T: Scalar>(
    dir: impl AsRef<Path>,
) -> Result<(CheckpointManifest, ModelParams<T>)> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = io::read_json(dir.join(MANIFEST_FILE))?;
    manifest.config.validate()?;
    let params = param_shapes(&manifest.config).try_map(|name, _| {
        let file = manifest.tensors.get(name).ok_or_else(|| {
            Error::Format(format!("{}: no tensor listed for {name}", dir.display()))
        })?;
        io::read_tensor::<T>(dir.join(file))
    })?;
    params.check_shapes(&manifest.config)?;
    Ok((manifest, params))
}
