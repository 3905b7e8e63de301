#![allow(dead_code)]

pub mod fusion;
pub mod ranking;
pub mod similarity;

use std::path::{Path, PathBuf};

use seds_core::data::{synth_dataset, Manifest, SyntheticSpec};
use seds_core::train::TrainConfig;

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn shipped_spec() -> SyntheticSpec {
    serde_json::from_str(&std::fs::read_to_string(configs().join("synth.json")).unwrap()).unwrap()
}

pub fn shipped_config() -> TrainConfig {
    TrainConfig::load(configs().join("train.json")).unwrap()
}

/// The shipped synthetic dataset, generated into a temporary directory.
pub fn shipped_data() -> (tempfile::TempDir, Manifest) {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(&shipped_spec(), dir.path()).unwrap();
    (dir, m)
}
