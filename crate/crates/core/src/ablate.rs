//! Grids of training runs that differ in loss weights, fusion variant or seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::fusion::FusionVariant;
use crate::model::Modality;
use crate::train::{load_split, Precision, TrainConfig, Trainer};

/// Overrides applied to the base config for one arm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub fusion: Option<FusionVariant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    /// Path of the base training config, relative to the grid file.
    pub base: PathBuf,
    /// Dataset directory, relative to the grid file.
    pub data: PathBuf,
    pub arms: Vec<Arm>,
    /// Seeds run for every arm; empty means the base seed only.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_split")]
    pub split: String,
    #[serde(default)]
    pub modality: Modality,
}

fn default_split() -> String {
    "test".into()
}

impl AblationGrid {
    /// Loads a grid and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut g: AblationGrid = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let root = path.parent().unwrap_or(Path::new(""));
        g.base = root.join(&g.base);
        g.data = root.join(&g.data);
        Ok(g)
    }
}

impl Arm {
    pub fn apply(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut c = base.clone();
        c.seed = seed;
        if let Some(a) = self.alpha {
            c.loss.alpha = a;
        }
        if let Some(b) = self.beta {
            c.loss.beta = b;
        }
        if let Some(f) = self.fusion {
            c.model.fusion.variant = f;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub fusion: String,
    pub t2v_r1: f64,
    pub t2v_r5: f64,
    pub t2v_r10: f64,
    pub t2v_medr: f64,
    pub v2t_r1: f64,
    pub v2t_r5: f64,
    pub v2t_r10: f64,
    pub v2t_medr: f64,
    pub final_loss: f64,
}

/// Trains one config and scores the last parameters on `split`.
pub fn run_arm(cfg: &TrainConfig, manifest: &Manifest, split: &str, modality: Modality, arm: &str) -> Result<AblationRow> {
    fn go<T: crate::scalar::Scalar>(
        cfg: &TrainConfig,
        manifest: &Manifest,
        split: &str,
        modality: Modality,
        arm: &str,
    ) -> Result<AblationRow> {
        let mut tr = Trainer::<T>::new(cfg, manifest)?;
        let summary = tr.run(None, |_| {})?;
        let samples = load_split(manifest, split, &tr.cfg.load_options())?;
        let ev = evaluate(&tr.model, &tr.store, &samples, modality)?;
        Ok(AblationRow {
            arm: arm.to_string(),
            seed: cfg.seed,
            alpha: cfg.loss.alpha,
            beta: cfg.loss.beta,
            fusion: cfg.model.fusion.variant.name().to_string(),
            t2v_r1: ev.t2v.r1,
            t2v_r5: ev.t2v.r5,
            t2v_r10: ev.t2v.r10,
            t2v_medr: ev.t2v.medr,
            v2t_r1: ev.v2t.r1,
            v2t_r5: ev.v2t.r5,
            v2t_r10: ev.v2t.r10,
            v2t_medr: ev.v2t.medr,
            final_loss: summary.final_loss,
        })
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(cfg, manifest, split, modality, arm),
        Precision::F64 => go::<f64>(cfg, manifest, split, modality, arm),
    }
}

pub fn run_grid(grid: &AblationGrid, mut progress: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    if grid.arms.is_empty() {
        return Err(Error::Config("ablation grid has no arms".into()));
    }
    let base = TrainConfig::load(&grid.base)?;
    let manifest = Manifest::load(&grid.data)?;
    let seeds = if grid.seeds.is_empty() { vec![base.seed] } else { grid.seeds.clone() };
    let mut rows = Vec::new();
    for arm in &grid.arms {
        for &seed in &seeds {
            let row = run_arm(&arm.apply(&base, seed), &manifest, &grid.split, grid.modality, &arm.name)?;
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Writes `ablation.json` and `ablation.csv` into `dir`.
pub fn write_table(rows: &[AblationRow], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("ablation.json");
    let text = serde_json::to_string_pretty(rows).map_err(|e| Error::json(&json, e))?;
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    let csv_path = dir.join("ablation.csv");
    let to_io = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&csv_path).map_err(to_io)?;
    for r in rows {
        w.serialize(r).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok((json, csv_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(arm: &str, r1: f64) -> AblationRow {
        AblationRow {
            arm: arm.into(),
            seed: 1,
            alpha: 0.8,
            beta: 0.4,
            fusion: "cgaf".into(),
            t2v_r1: r1,
            t2v_r5: 100.0,
            t2v_r10: 100.0,
            t2v_medr: 1.0,
            v2t_r1: r1,
            v2t_r5: 100.0,
            v2t_r10: 100.0,
            v2t_medr: 1.5,
            final_loss: 0.25,
        }
    }

    #[test]
    fn arm_overrides() {
        let base = TrainConfig::default();
        let arm = Arm {
            name: "x".into(),
            beta: Some(0.0),
            fusion: Some(FusionVariant::CrossAtten),
            ..Arm::default()
        };
        let c = arm.apply(&base, 9);
        assert_eq!((c.seed, c.loss.alpha, c.loss.beta), (9, 0.8, 0.0));
        assert_eq!(c.model.fusion.variant, FusionVariant::CrossAtten);
    }

    #[test]
    fn table_files() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("full", 90.0), row("no_pr", 84.0)];
        let (json, csv) = write_table(&rows, dir.path()).unwrap();
        let back: Vec<AblationRow> = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(back, rows);
        let text = fs::read_to_string(csv).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("arm,seed,alpha,beta,fusion,t2v_r1"));
        assert_eq!(lines.next().unwrap(), "full,1,0.8,0.4,cgaf,90.0,100.0,100.0,1.0,90.0,100.0,100.0,1.5,0.25");
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn grid_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        fs::write(&path, r#"{"base": "train.json", "data": "data", "arms": [{"name": "full"}], "seeds": [1, 2]}"#).unwrap();
        let g = AblationGrid::load(&path).unwrap();
        assert_eq!(g.base, dir.path().join("train.json"));
        assert_eq!(g.split, "test");
        assert_eq!(g.modality, Modality::Fused);
        fs::write(&path, r#"{"base": "t", "data": "d", "arms": [], "bogus": 1}"#).unwrap();
        assert!(AblationGrid::load(&path).is_err());
    }
}
