//! A checkpoint directory holds `config.json` (the resolved training
//! config), `state.json` and `params.seda` (every parameter by name).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{read_archive, write_archive};

pub const PARAMS_FILE: &str = "params.seda";
pub const CONFIG_FILE: &str = "config.json";
pub const STATE_FILE: &str = "state.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
    /// The shuffle generator is reseeded per epoch from `seed` on this stream.
    pub next_shuffle_stream: u64,
    pub val_r1: Option<f64>,
    pub best_val_r1: Option<f64>,
}

pub struct Checkpoint<T> {
    pub dir: PathBuf,
    pub config: TrainConfig,
    pub state: CheckpointState,
    pub model: Model,
    pub store: ParamStore<T>,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    cfg: &TrainConfig,
    store: &ParamStore<T>,
    state: &CheckpointState,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries: Vec<(String, &crate::tensor::Tensor<T>)> = store.iter().map(|p| (p.name.clone(), &p.value)).collect();
    // Write to a temporary name first so a crash never leaves a torn archive.
    let tmp = dir.join(format!("{PARAMS_FILE}.tmp"));
    write_archive(&tmp, &entries)?;
    let dest = dir.join(PARAMS_FILE);
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    write_json(&dir.join(STATE_FILE), state)
}

/// Accepts a checkpoint directory, its `params.seda`, or a training output
/// directory (which resolves to its `best` checkpoint).
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    let dir = if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else if path.join("best").join(PARAMS_FILE).is_file() {
        path.join("best")
    } else {
        path.to_path_buf()
    };
    if dir.join(PARAMS_FILE).is_file() && dir.join(CONFIG_FILE).is_file() {
        Ok(dir)
    } else {
        Err(Error::CheckpointNotFound(path.to_path_buf()))
    }
}

/// Rebuilds the model from the stored config and loads its parameters;
/// any name or shape disagreement is an error.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let dir = resolve_checkpoint(path)?;
    let config: TrainConfig = read_json(&dir.join(CONFIG_FILE))?;
    let state: CheckpointState = read_json(&dir.join(STATE_FILE))?;
    let (model, mut store) = Model::new::<T>(&config.model, &config.loss, config.seed)?;
    store.load(read_archive(dir.join(PARAMS_FILE))?)?;
    Ok(Checkpoint {
        dir,
        config,
        state,
        model,
        store,
    })
}
