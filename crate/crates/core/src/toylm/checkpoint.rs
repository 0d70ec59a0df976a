use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ToyConfig;
use super::model::{Params, ToyLM};
use crate::actstore::npad;
use crate::error::{Error, Result};

const CHECKPOINT_FILE: &str = "checkpoint.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    config: ToyConfig,
    tensors: Vec<TensorEntry>,
}

/// Writes `checkpoint.json` plus one NPAD file per parameter tensor.
pub fn save_checkpoint(model: &ToyLM, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::store(dir, e))?;
    let mut tensors = Vec::new();
    for (name, shape, data) in model.params.named_tensors() {
        let file = format!("{name}.npad");
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("parameters are vectors or matrices"),
        };
        npad::write(&dir.join(&file), rows, cols, data)?;
        tensors.push(TensorEntry { name, shape, file });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        config: model.cfg.clone(),
        tensors,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Schema(e.to_string()))?;
    npad::write_atomic(&dir.join(CHECKPOINT_FILE), &json)
}

pub fn load_checkpoint(dir: &Path) -> Result<ToyLM> {
    let path = dir.join(CHECKPOINT_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::store(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!("unsupported checkpoint version {}", manifest.format_version)));
    }
    manifest.config.validate()?;
    let mut params = Params::zeros(&manifest.config);
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Schema(format!(
            "checkpoint lists {} tensors, configuration needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut slices = params.slices_mut();
    for ((name, shape), (entry, dst)) in expected.iter().zip(manifest.tensors.iter().zip(slices.iter_mut())) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Schema(format!("tensor {} does not match expected {name}", entry.name)));
        }
        let t = npad::read(&dir.join(&entry.file))?;
        if t.data.len() != dst.len() {
            return Err(Error::Schema(format!("tensor {name} has {} values, expected {}", t.data.len(), dst.len())));
        }
        dst.copy_from_slice(&t.data);
    }
    drop(slices);
    ToyLM::from_params(manifest.config, params)
}

