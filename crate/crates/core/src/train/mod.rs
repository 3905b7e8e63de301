//! Contrastive training loop: grouped learning rates, Adam, warmup-cosine
//! schedule, validation and checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::config::ModelConfig;
use crate::data::{load_sample, Batch, LoadOptions, LoadedSample, Manifest, DEFAULT_MIN_CONF};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{Modality, Model};
use crate::nn::{ParamGroup, ParamStore};
use crate::objectives::LossConfig;
use crate::scalar::Scalar;

mod checkpoint;
mod optim;

pub use checkpoint::{
    load_checkpoint, resolve_checkpoint, save_checkpoint, Checkpoint, CheckpointState, CONFIG_FILE, PARAMS_FILE, STATE_FILE,
};
pub use optim::{lr_at, Adam, Schedule};

pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Base rate of the pose encoder, RGB adapter, fusion and temperature.
    pub lr_encoder: f64,
    /// Base rate of the interaction transformers and text encoder.
    pub lr_transformer: f64,
    pub warmup_frac: f64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub precision: Precision,
    pub min_conf: f32,
    pub train_split: String,
    pub val_split: String,
    /// Train on the first `n` samples of the training split only.
    pub train_limit: Option<usize>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            seed: 0,
            lr_encoder: 1e-4,
            lr_transformer: 1e-5,
            warmup_frac: 0.1,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            precision: Precision::F64,
            min_conf: DEFAULT_MIN_CONF,
            train_split: "train".into(),
            val_split: "val".into(),
            train_limit: None,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// Batch 128, 200 epochs, 64 clips.
    pub fn paper_scale() -> Self {
        Self {
            batch_size: 128,
            epochs: 200,
            model: ModelConfig {
                clips: 64,
                ..ModelConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr_encoder >= 0.0 && self.lr_transformer >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!("warmup_frac {} outside [0, 1)", self.warmup_frac)));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    /// Fills the vocabulary size from the manifest when left at 0.
    pub fn resolved(&self, manifest: &Manifest) -> Self {
        let mut c = self.clone();
        if c.model.text_vocab == 0 {
            c.model.text_vocab = manifest.vocab.len();
        }
        c
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            clips: self.model.clips,
            max_words: self.model.max_words,
            min_conf: self.min_conf,
        }
    }
}

pub fn load_split(manifest: &Manifest, split: &str, opts: &LoadOptions) -> Result<Vec<LoadedSample>> {
    manifest
        .split_indices(split)
        .into_iter()
        .map(|i| load_sample(manifest, i, opts))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrGroups {
    pub encoder: f64,
    pub transformer: f64,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: f64,
    pub loss_tva: f64,
    pub loss_tv: f64,
    pub loss_tp: f64,
    pub loss_tr: f64,
    pub loss_pr: f64,
    pub lr_groups: LrGroups,
    /// Validation text-to-video R@1, set on the last step of an epoch.
    pub val_r1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub best_epoch: usize,
    pub best_val_r1: Option<f64>,
}

pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    pub model: Model,
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
    pub schedule: Schedule,
    pub train: Vec<LoadedSample>,
    pub val: Vec<LoadedSample>,
    /// Optimizer steps taken.
    pub step: usize,
    /// Epochs completed.
    pub epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: &TrainConfig, manifest: &Manifest) -> Result<Self> {
        let cfg = cfg.resolved(manifest);
        cfg.validate()?;
        let opts = cfg.load_options();
        let mut train = load_split(manifest, &cfg.train_split, &opts)?;
        if let Some(n) = cfg.train_limit {
            train.truncate(n);
        }
        let val = load_split(manifest, &cfg.val_split, &opts)?;
        Self::from_samples(&cfg, train, val)
    }

    pub fn from_samples(cfg: &TrainConfig, train: Vec<LoadedSample>, val: Vec<LoadedSample>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Config(format!("split {:?} has no samples", cfg.train_split)));
        }
        let (model, store) = Model::new::<T>(&cfg.model, &cfg.loss, cfg.seed)?;
        let total = cfg.epochs * train.len().div_ceil(cfg.batch_size);
        Ok(Self {
            schedule: Schedule::new(cfg.lr_encoder, cfg.lr_transformer, total, cfg.warmup_frac),
            adam: Adam::new(&store),
            cfg: cfg.clone(),
            model,
            store,
            train,
            val,
            step: 0,
            epoch: 0,
        })
    }

    /// Sample order of `epoch`; depends only on the seed and the epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        if self.cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            rng.set_stream(epoch as u64 + 1);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Forward, backward and one grouped Adam update on the given training
    /// samples.
    pub fn train_step(&mut self, indices: &[usize]) -> Result<StepRecord> {
        let samples: Vec<&LoadedSample> = indices.iter().map(|&i| &self.train[i]).collect();
        let batch = Batch::<T>::assemble(&samples)?;
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let parts = self.model.loss(&p, &batch)?;
        let f = |v: crate::autograd::Var<'_, T>| v.item().as_f64();
        let mut rec = StepRecord {
            epoch: self.epoch,
            step: self.step,
            loss_total: f(parts.total),
            loss_tva: f(parts.tva),
            loss_tv: f(parts.tv),
            loss_tp: f(parts.tp),
            loss_tr: f(parts.tr),
            loss_pr: f(parts.pr),
            lr_groups: LrGroups {
                encoder: 0.0,
                transformer: 0.0,
            },
            val_r1: None,
        };
        if !rec.loss_total.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                msg: format!("loss is {}", rec.loss_total),
            });
        }
        let grads = tape.backward(parts.total)?;
        let grads: Vec<_> = p.vars().iter().map(|&v| grads.get_or_zeros(v)).collect();
        drop(p);
        let next = self.step + 1;
        let lr_enc = self.schedule.lr_at(ParamGroup::Encoder, next)?;
        let lr_tr = self.schedule.lr_at(ParamGroup::Transformer, next)?;
        rec.lr_groups = LrGroups {
            encoder: lr_enc,
            transformer: lr_tr,
        };
        self.adam
            .update(&mut self.store, &grads, |g| match g {
                ParamGroup::Encoder => lr_enc,
                ParamGroup::Transformer => lr_tr,
            })
            .map_err(|e| Error::Diverged {
                step: self.step,
                msg: e.to_string(),
            })?;
        let t = &self.model.temperature;
        t.clamp_value(&mut self.store.get_mut(t.log_scale).value);
        self.step = next;
        Ok(rec)
    }

    pub fn run_epoch(&mut self) -> Result<Vec<StepRecord>> {
        let order = self.epoch_order(self.epoch);
        let mut out = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            out.push(self.train_step(chunk)?);
        }
        self.epoch += 1;
        Ok(out)
    }

    /// Fused-stream text-to-video R@1 on the validation split.
    pub fn validate(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(&self.model, &self.store, &self.val, Modality::Fused)?.t2v.r1))
    }

    fn state(&self, val_r1: Option<f64>, best_val_r1: Option<f64>) -> CheckpointState {
        CheckpointState {
            epoch: self.epoch,
            step: self.step,
            seed: self.cfg.seed,
            next_shuffle_stream: self.epoch as u64 + 1,
            val_r1,
            best_val_r1,
        }
    }

    /// Runs every epoch. With `out`, writes `metrics.jsonl` and the `best`
    /// (by validation R@1, earliest on ties) and `last` checkpoints, each
    /// after the epoch that produced it.
    pub fn run(&mut self, out: Option<&Path>, mut on_step: impl FnMut(&StepRecord)) -> Result<TrainSummary> {
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_FILE);
                Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
            }
            None => None,
        };
        let mut best: Option<(usize, Option<f64>)> = None;
        let mut final_loss = f64::NAN;
        while self.epoch < self.cfg.epochs {
            let mut records = self.run_epoch()?;
            let val_r1 = self.validate()?;
            if let Some(last) = records.last_mut() {
                last.val_r1 = val_r1;
                final_loss = last.loss_total;
            }
            if let Some((w, path)) = log.as_mut() {
                for r in &records {
                    let line = serde_json::to_string(r).map_err(|e| Error::json(&*path, e))?;
                    writeln!(w, "{line}").map_err(|e| Error::io(&*path, e))?;
                }
                w.flush().map_err(|e| Error::io(&*path, e))?;
            }
            records.iter().for_each(&mut on_step);
            let improved = match best {
                None => true,
                Some((_, prev)) => match (val_r1, prev) {
                    (Some(v), Some(p)) => v > p,
                    _ => false,
                },
            };
            if improved {
                best = Some((self.epoch, val_r1));
            }
            let best_val = best.and_then(|b| b.1);
            if let Some(dir) = out {
                let state = self.state(val_r1, best_val);
                if improved {
                    save_checkpoint(&dir.join("best"), &self.cfg, &self.store, &state)?;
                }
                save_checkpoint(&dir.join("last"), &self.cfg, &self.store, &state)?;
            }
        }
        let (best_epoch, best_val_r1) = best.unwrap_or((self.epoch, None));
        Ok(TrainSummary {
            steps: self.step,
            epochs: self.epoch,
            final_loss,
            best_epoch,
            best_val_r1,
        })
    }
}
