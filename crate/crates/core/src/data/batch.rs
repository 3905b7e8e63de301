use super::clips::{plan_clips, ClipPlan};
use super::manifest::Manifest;
use super::pose::{filter_frames, PoseSequence, CLIP_LEN, DEFAULT_MIN_CONF};
use super::synth::RGB_DIM;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_tensor, Tensor};

pub const MAX_CLIPS: usize = 64;
pub const MAX_WORDS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadOptions {
    pub clips: usize,
    pub max_words: usize,
    pub min_conf: f32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            clips: MAX_CLIPS,
            max_words: MAX_WORDS,
            min_conf: DEFAULT_MIN_CONF,
        }
    }
}

/// One sample after filtering, clip planning and tokenization.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSample {
    pub id: String,
    /// Retained frames.
    pub pose: PoseSequence,
    /// Original index of each retained frame.
    pub kept: Vec<usize>,
    pub plan: ClipPlan,
    /// `[clips × 1024]` RGB features, one row per planned clip.
    pub rgb: Vec<f32>,
    pub tokens: Vec<usize>,
}

/// Loads sample `index`. Frame filtering falls back to the unfiltered
/// sequence when fewer than 16 frames would survive.
pub fn load_sample(manifest: &Manifest, index: usize, opts: &LoadOptions) -> Result<LoadedSample> {
    let entry = manifest.samples.get(index).ok_or_else(|| Error::Ingest {
        sample: format!("#{index}"),
        msg: format!("index out of range for {} samples", manifest.samples.len()),
    })?;
    let ingest = |msg: String| Error::Ingest {
        sample: entry.id.clone(),
        msg,
    };
    let raw = PoseSequence::read(manifest.resolve(&entry.pose_file), entry.fps).map_err(|e| ingest(e.to_string()))?;
    let (pose, kept) = match filter_frames(&raw, opts.min_conf) {
        Ok(r) => r,
        Err(Error::TooShort { .. }) if raw.frames >= CLIP_LEN => {
            let kept = (0..raw.frames).collect();
            (raw, kept)
        }
        Err(e) => return Err(ingest(e.to_string())),
    };
    let plan = plan_clips(pose.frames, opts.clips).map_err(|e| ingest(e.to_string()))?;

    let feats: Tensor<f32> = read_tensor(manifest.resolve(&entry.rgb_file)).map_err(|e| ingest(e.to_string()))?;
    if feats.rank() != 2 || feats.shape()[1] != RGB_DIM {
        return Err(ingest(format!("rgb features have shape {:?}, expected [windows, {RGB_DIM}]", feats.shape())));
    }
    feats.check_finite("rgb features").map_err(|e| ingest(e.to_string()))?;
    // Row r holds the window starting at original frame r.
    let rows = feats.shape()[0];
    let mut rgb = Vec::with_capacity(plan.len() * RGB_DIM);
    for &s in &plan.starts {
        let r = kept[s].min(rows - 1);
        rgb.extend_from_slice(&feats.data()[r * RGB_DIM..(r + 1) * RGB_DIM]);
    }

    if entry.text.is_empty() {
        return Err(ingest("empty text".into()));
    }
    let tokens = entry
        .text
        .iter()
        .take(opts.max_words)
        .map(|t| manifest.token_id(t))
        .collect();
    Ok(LoadedSample {
        id: entry.id.clone(),
        pose,
        kept,
        plan,
        rgb,
        tokens,
    })
}

/// Aligned streams for `B` text-video pairs; position `i` of every field
/// belongs to pair `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub ids: Vec<String>,
    pub poses: Vec<PoseSequence>,
    pub plans: Vec<ClipPlan>,
    /// Clips per sample.
    pub clips: usize,
    /// `[B, clips, 1024]`.
    pub rgb: Tensor<T>,
    /// `[B * clips]`.
    pub clip_mask: Vec<bool>,
    /// Padded token length (longest text in the batch).
    pub words: usize,
    /// `[B * words]`, padded with the pad id.
    pub tokens: Vec<usize>,
    pub token_mask: Vec<bool>,
}

impl<T: Scalar> Batch<T> {
    pub fn assemble(samples: &[&LoadedSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("batch", "no samples"))?;
        let clips = first.plan.len();
        if let Some(s) = samples.iter().find(|s| s.plan.len() != clips) {
            return Err(Error::invalid("batch", format!("sample {} has {} clips, expected {clips}", s.id, s.plan.len())));
        }
        let b = samples.len();
        let words = samples.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
        let mut tokens = vec![super::manifest::PAD_ID; b * words];
        let mut token_mask = vec![false; b * words];
        for (i, s) in samples.iter().enumerate() {
            for (j, &t) in s.tokens.iter().enumerate() {
                tokens[i * words + j] = t;
                token_mask[i * words + j] = true;
            }
        }
        let rgb = samples
            .iter()
            .flat_map(|s| s.rgb.iter().map(|&v| T::lit(v as f64)))
            .collect();
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            poses: samples.iter().map(|s| s.pose.clone()).collect(),
            plans: samples.iter().map(|s| s.plan.clone()).collect(),
            clips,
            rgb: Tensor::new([b, clips, RGB_DIM], rgb)?,
            clip_mask: samples.iter().flat_map(|s| s.plan.mask.iter().copied()).collect(),
            words,
            tokens,
            token_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn load_batch<T: Scalar>(manifest: &Manifest, indices: &[usize], opts: &LoadOptions) -> Result<Batch<T>> {
    let samples = indices
        .iter()
        .map(|&i| load_sample(manifest, i, opts))
        .collect::<Result<Vec<_>>>()?;
    Batch::assemble(&samples.iter().collect::<Vec<_>>())
}
