use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SyntheticSpec;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub split: String,
    pub pose_file: String,
    pub rgb_file: String,
    pub text: Vec<String>,
    pub gloss_ids: Vec<usize>,
    #[serde(default = "default_fps")]
    pub fps: f32,
}

fn default_fps() -> f32 {
    24.0
}

/// Dataset index; file paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<SampleEntry>,
    pub vocab: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SyntheticSpec>,
    pub seed: u64,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    /// Loads `dir/manifest.json` (or the file itself if a file path is given).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&file, e))?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        if m.vocab.get(PAD_ID).map(String::as_str) != Some(PAD_TOKEN)
            || m.vocab.get(UNK_ID).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::Config(format!("{}: vocab must start with {PAD_TOKEN}, {UNK_TOKEN}", file.display())));
        }
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let file = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&file, e))?;
        fs::write(&file, text).map_err(|e| Error::io(&file, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Indices of samples in `split`, in manifest order.
    pub fn split_indices(&self, split: &str) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.vocab.iter().position(|v| v == token).unwrap_or(UNK_ID)
    }
}
