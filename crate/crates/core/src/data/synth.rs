//! Seeded generator of paired (pose, RGB-feature, text) samples.
//!
//! Every gloss owns a keypoint trajectory prototype and a 1024-dim
//! appearance prototype. A sample strings several glosses together, then
//! adds keypoint jitter, a global signer offset/scale, a sample-wide RGB
//! nuisance vector and per-window RGB noise. Its text is the gloss tokens,
//! optionally locally shuffled and padded with filler words.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, SampleEntry, PAD_TOKEN, UNK_TOKEN};
use super::pose::{PoseSequence, CLIP_LEN};
use super::topology::{body, BODY, HAND_POINTS, LEFT_HAND, NUM_KEYPOINTS, RIGHT_HAND};
use crate::error::{Error, Result};
use crate::tensor::{write_tensor, Tensor};

pub const RGB_DIM: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Gloss vocabulary size.
    pub glosses: usize,
    /// Inclusive range of glosses per sample.
    pub glosses_per_sample: [usize; 2],
    /// Inclusive range of frames per gloss prototype.
    pub gloss_frames: [usize; 2],
    /// Std of per-keypoint coordinate jitter.
    pub pose_noise: f64,
    /// Std of per-window RGB feature noise.
    pub rgb_noise: f64,
    /// Rank of the subspace the sample-wide RGB nuisance vector lives in.
    pub rgb_nuisance_dim: usize,
    /// Per-component std of the RGB nuisance vector.
    pub rgb_nuisance_strength: f64,
    /// Signer offset drawn uniformly from `[-signer_offset, signer_offset]` per axis.
    pub signer_offset: f64,
    /// Signer scale drawn uniformly from `1 ± signer_scale`.
    pub signer_scale: f64,
    pub filler_tokens: usize,
    /// Probability of inserting a filler word before each gloss token.
    pub filler_prob: f64,
    /// Probability of swapping each adjacent pair of gloss tokens.
    pub permute_prob: f64,
    /// Probability that a frame has one low-confidence hand.
    pub low_conf_prob: f64,
    pub fps: f32,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            glosses: 20,
            glosses_per_sample: [2, 4],
            gloss_frames: [16, 24],
            pose_noise: 0.004,
            rgb_noise: 1.0,
            rgb_nuisance_dim: 16,
            rgb_nuisance_strength: 1.0,
            signer_offset: 0.05,
            signer_scale: 0.1,
            filler_tokens: 5,
            filler_prob: 0.2,
            permute_prob: 0.2,
            low_conf_prob: 0.02,
            fps: 24.0,
            seed: 7,
            n_train: 200,
            n_val: 50,
            n_test: 50,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.glosses < 2 {
            return bad(format!("need at least 2 glosses, got {}", self.glosses));
        }
        let [g0, g1] = self.glosses_per_sample;
        let [f0, f1] = self.gloss_frames;
        if g0 == 0 || g0 > g1 || f0 == 0 || f0 > f1 {
            return bad("empty or inverted range".into());
        }
        if g0 * f0 < CLIP_LEN {
            return bad(format!("shortest sample has {} frames, need {CLIP_LEN}", g0 * f0));
        }
        let scales = [
            self.pose_noise,
            self.rgb_noise,
            self.rgb_nuisance_strength,
            self.signer_offset,
            self.signer_scale,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise scales must be finite and >= 0".into());
        }
        if self.signer_scale >= 1.0 {
            return bad("signer_scale must be < 1".into());
        }
        for p in [self.filler_prob, self.permute_prob, self.low_conf_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.filler_prob > 0.0 && self.filler_tokens == 0 {
            return bad("filler_prob > 0 needs filler_tokens > 0".into());
        }
        if self.n_train + self.n_val + self.n_test == 0 {
            return bad("no samples requested".into());
        }
        Ok(())
    }

    pub fn gloss_token(g: usize) -> String {
        format!("g{g:02}")
    }

    pub fn filler_token(k: usize) -> String {
        format!("w{k}")
    }

    /// `<pad>`, `<unk>`, gloss tokens, filler tokens.
    pub fn vocab(&self) -> Vec<String> {
        let mut v = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        v.extend((0..self.glosses).map(Self::gloss_token));
        v.extend((0..self.filler_tokens).map(Self::filler_token));
        v
    }
}

type Frame = [[f32; 2]; NUM_KEYPOINTS];

/// Per-gloss prototypes shared by every sample.
#[derive(Clone, Debug)]
pub struct Prototypes {
    pub trajectories: Vec<Vec<Frame>>,
    pub rgb: Vec<Vec<f32>>,
    pub nuisance_basis: Vec<Vec<f32>>,
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

fn normal2(rng: &mut ChaCha8Rng, std: f64) -> [f64; 2] {
    [normal(rng, std), normal(rng, std)]
}

/// Resting hand layout relative to the wrist: five four-joint fingers fanned out.
fn canonical_hand(mirror: bool) -> [[f64; 2]; HAND_POINTS] {
    let mut h = [[0.0; 2]; HAND_POINTS];
    for finger in 0..5 {
        let angle = (-60.0 + 30.0 * finger as f64).to_radians();
        let (dx, dy) = (angle.sin(), -angle.cos());
        for joint in 1..=4 {
            let r = 0.012 * joint as f64;
            let x = if mirror { -dx * r } else { dx * r };
            h[finger * 4 + joint] = [x, dy * r];
        }
    }
    h
}

impl Prototypes {
    pub fn generate(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let hands = [canonical_hand(false), canonical_hand(true)];
        let nose = [0.5, 0.28];
        let shoulders = [[0.58, 0.42], [0.42, 0.42]];
        let wrist_rest = [[0.6, 0.68], [0.4, 0.68]];
        let mut trajectories = Vec::with_capacity(spec.glosses);
        for _ in 0..spec.glosses {
            let len = rng.gen_range(spec.gloss_frames[0]..=spec.gloss_frames[1]);
            let wrist_a = [normal2(&mut rng, 0.06), normal2(&mut rng, 0.06)];
            let wrist_b = [normal2(&mut rng, 0.06), normal2(&mut rng, 0.06)];
            let wrist_arc = [normal2(&mut rng, 0.03), normal2(&mut rng, 0.03)];
            let shape_a: Vec<Vec<[f64; 2]>> = (0..2)
                .map(|_| (0..HAND_POINTS).map(|_| normal2(&mut rng, 0.012)).collect())
                .collect();
            let shape_b: Vec<Vec<[f64; 2]>> = (0..2)
                .map(|_| (0..HAND_POINTS).map(|_| normal2(&mut rng, 0.012)).collect())
                .collect();
            let head = normal2(&mut rng, 0.01);
            let frames = (0..len)
                .map(|f| {
                    let s = if len > 1 { f as f64 / (len - 1) as f64 } else { 0.0 };
                    let arc = (std::f64::consts::PI * s).sin();
                    let mut frame: Frame = [[0.0; 2]; NUM_KEYPOINTS];
                    let mut wrists = [[0.0; 2]; 2];
                    for (h, range) in [LEFT_HAND, RIGHT_HAND].into_iter().enumerate() {
                        let w = [
                            wrist_rest[h][0] + wrist_a[h][0] + (wrist_b[h][0] - wrist_a[h][0]) * s + wrist_arc[h][0] * arc,
                            wrist_rest[h][1] + wrist_a[h][1] + (wrist_b[h][1] - wrist_a[h][1]) * s + wrist_arc[h][1] * arc,
                        ];
                        wrists[h] = w;
                        for (k, idx) in range.enumerate() {
                            let dx = if k == 0 { 0.0 } else { shape_a[h][k][0] + (shape_b[h][k][0] - shape_a[h][k][0]) * s };
                            let dy = if k == 0 { 0.0 } else { shape_a[h][k][1] + (shape_b[h][k][1] - shape_a[h][k][1]) * s };
                            frame[idx] = [(w[0] + hands[h][k][0] + dx) as f32, (w[1] + hands[h][k][1] + dy) as f32];
                        }
                    }
                    let b = BODY.start;
                    frame[b + body::NOSE] = [(nose[0] + head[0] * arc) as f32, (nose[1] + head[1] * arc) as f32];
                    let sh = [body::LEFT_SHOULDER, body::RIGHT_SHOULDER];
                    let el = [body::LEFT_ELBOW, body::RIGHT_ELBOW];
                    let wr = [body::LEFT_WRIST, body::RIGHT_WRIST];
                    for h in 0..2 {
                        frame[b + sh[h]] = [shoulders[h][0] as f32, shoulders[h][1] as f32];
                        let out = if h == 0 { 0.04 } else { -0.04 };
                        frame[b + el[h]] = [
                            ((shoulders[h][0] + wrists[h][0]) / 2.0 + out) as f32,
                            ((shoulders[h][1] + wrists[h][1]) / 2.0) as f32,
                        ];
                        frame[b + wr[h]] = [wrists[h][0] as f32, wrists[h][1] as f32];
                    }
                    frame
                })
                .collect();
            trajectories.push(frames);
        }
        let rgb = (0..spec.glosses)
            .map(|_| (0..RGB_DIM).map(|_| normal(&mut rng, 1.0) as f32).collect())
            .collect();
        let nd = spec.rgb_nuisance_dim.max(1);
        let nuisance_basis = (0..spec.rgb_nuisance_dim)
            .map(|_| {
                (0..RGB_DIM)
                    .map(|_| (normal(&mut rng, 1.0) / (nd as f64).sqrt()) as f32)
                    .collect()
            })
            .collect();
        Self {
            trajectories,
            rgb,
            nuisance_basis,
        }
    }
}

/// One generated sample, before it is written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub gloss_ids: Vec<usize>,
    pub text: Vec<String>,
    pub pose: PoseSequence,
    /// Window features `[frames - 15, 1024]`, one per stride-1 clip start.
    pub rgb: Tensor<f32>,
    pub signer_offset: [f32; 2],
    pub signer_scale: f32,
}

/// Deterministic in `(spec, index)`; samples draw from independent streams.
pub fn generate_sample(spec: &SyntheticSpec, protos: &Prototypes, index: usize) -> GeneratedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);

    let n = rng.gen_range(spec.glosses_per_sample[0]..=spec.glosses_per_sample[1]);
    let gloss_ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.glosses)).collect();

    let offset = [
        rng.gen_range(-1.0..=1.0) * spec.signer_offset,
        rng.gen_range(-1.0..=1.0) * spec.signer_offset,
    ];
    let scale = 1.0 + rng.gen_range(-1.0..=1.0) * spec.signer_scale;

    let mut frame_gloss = Vec::new();
    let mut keypoints = Vec::new();
    for &g in &gloss_ids {
        for frame in &protos.trajectories[g] {
            frame_gloss.push(g);
            let low_hand = (rng.gen::<f64>() < spec.low_conf_prob).then(|| rng.gen_range(0..2usize));
            for (k, p) in frame.iter().enumerate() {
                let mut xy = [0.0f64; 2];
                for a in 0..2 {
                    let c = 0.5;
                    xy[a] = c + scale * (p[a] as f64 - c) + offset[a] + normal(&mut rng, spec.pose_noise);
                }
                let in_low = match low_hand {
                    Some(0) => LEFT_HAND.contains(&k),
                    Some(_) => RIGHT_HAND.contains(&k),
                    None => false,
                };
                let conf = if in_low { rng.gen_range(0.0..0.2) } else { rng.gen_range(0.85..=1.0) };
                keypoints.extend_from_slice(&[xy[0] as f32, xy[1] as f32, conf as f32]);
            }
        }
    }
    let pose = PoseSequence::new(keypoints, spec.fps).expect("generated pose is valid");

    let mut nuisance = vec![0.0f64; RGB_DIM];
    for basis in &protos.nuisance_basis {
        let z = normal(&mut rng, spec.rgb_nuisance_strength);
        for (v, &b) in nuisance.iter_mut().zip(basis) {
            *v += z * b as f64;
        }
    }
    let windows = pose.frames - CLIP_LEN + 1;
    let mut rgb = Vec::with_capacity(windows * RGB_DIM);
    for w in 0..windows {
        let mut feat = nuisance.clone();
        for &g in &frame_gloss[w..w + CLIP_LEN] {
            for (v, &p) in feat.iter_mut().zip(&protos.rgb[g]) {
                *v += p as f64 / CLIP_LEN as f64;
            }
        }
        for v in feat.iter_mut() {
            *v += normal(&mut rng, spec.rgb_noise);
        }
        rgb.extend(feat.into_iter().map(|v| v as f32));
    }
    let rgb = Tensor::new([windows, RGB_DIM], rgb).expect("rgb shape");

    let mut glosses: Vec<String> = gloss_ids.iter().map(|&g| SyntheticSpec::gloss_token(g)).collect();
    let mut i = 0;
    while i + 1 < glosses.len() {
        if rng.gen::<f64>() < spec.permute_prob {
            glosses.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    let mut text = Vec::with_capacity(glosses.len() * 2);
    for g in glosses {
        if rng.gen::<f64>() < spec.filler_prob {
            let k = *(0..spec.filler_tokens).collect::<Vec<_>>().choose(&mut rng).expect("fillers");
            text.push(SyntheticSpec::filler_token(k));
        }
        text.push(g);
    }

    GeneratedSample {
        gloss_ids,
        text,
        pose,
        rgb,
        signer_offset: [offset[0] as f32, offset[1] as f32],
        signer_scale: scale as f32,
    }
}

/// Writes `manifest.json`, `pose/<id>.sedt` and `rgb/<id>.sedt` under `out`.
pub fn synth_dataset(spec: &SyntheticSpec, out: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out = out.as_ref();
    for sub in ["pose", "rgb"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let protos = Prototypes::generate(spec);
    let splits = [("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)];
    let mut samples = Vec::new();
    let mut index = 0;
    for (split, count) in splits {
        for i in 0..count {
            let s = generate_sample(spec, &protos, index);
            index += 1;
            let id = format!("{split}_{i:04}");
            let pose_file = format!("pose/{id}.sedt");
            let rgb_file = format!("rgb/{id}.sedt");
            s.pose.write(out.join(&pose_file))?;
            write_tensor(out.join(&rgb_file), &s.rgb)?;
            samples.push(SampleEntry {
                id,
                split: split.to_string(),
                pose_file,
                rgb_file,
                text: s.text,
                gloss_ids: s.gloss_ids,
                fps: spec.fps,
            });
        }
    }
    let manifest = Manifest {
        samples,
        vocab: spec.vocab(),
        spec: Some(spec.clone()),
        seed: spec.seed,
        root: out.to_path_buf(),
    };
    manifest.save(out)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SyntheticSpec {
        SyntheticSpec {
            pose_noise: 0.0,
            rgb_nuisance_strength: 0.0,
            signer_scale: 0.0,
            low_conf_prob: 0.0,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn validation() {
        assert!(SyntheticSpec::default().validate().is_ok());
        assert!(SyntheticSpec { glosses: 1, ..Default::default() }.validate().is_err());
        assert!(SyntheticSpec { pose_noise: -1.0, ..Default::default() }.validate().is_err());
        assert!(SyntheticSpec {
            glosses_per_sample: [1, 1],
            gloss_frames: [8, 8],
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn identical_gloss_sequences_differ_only_by_signer_offset() {
        let spec = quiet();
        let protos = Prototypes::generate(&spec);
        let samples: Vec<_> = (0..400).map(|i| generate_sample(&spec, &protos, i)).collect();
        let (a, b) = (0..samples.len())
            .flat_map(|i| (i + 1..samples.len()).map(move |j| (i, j)))
            .find(|&(i, j)| samples[i].gloss_ids == samples[j].gloss_ids)
            .expect("a repeated gloss sequence among 400 samples");
        let (sa, sb) = (&samples[a], &samples[b]);
        assert_eq!(sa.pose.frames, sb.pose.frames);
        let d = [
            sb.signer_offset[0] - sa.signer_offset[0],
            sb.signer_offset[1] - sa.signer_offset[1],
        ];
        for (pa, pb) in sa.pose.keypoints.chunks(3).zip(sb.pose.keypoints.chunks(3)) {
            assert!((pb[0] - pa[0] - d[0]).abs() < 1e-5);
            assert!((pb[1] - pa[1] - d[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn text_is_injective_without_filler_or_permutation() {
        let spec = SyntheticSpec {
            filler_prob: 0.0,
            permute_prob: 0.0,
            ..SyntheticSpec::default()
        };
        let protos = Prototypes::generate(&spec);
        let mut seen = std::collections::HashMap::new();
        for i in 0..300 {
            let s = generate_sample(&spec, &protos, i);
            let expected: Vec<String> = s.gloss_ids.iter().map(|&g| SyntheticSpec::gloss_token(g)).collect();
            assert_eq!(s.text, expected);
            if let Some(prev) = seen.insert(s.text.clone(), s.gloss_ids.clone()) {
                assert_eq!(prev, s.gloss_ids);
            }
        }
    }

    #[test]
    fn rgb_has_one_row_per_window() {
        let spec = SyntheticSpec::default();
        let protos = Prototypes::generate(&spec);
        let s = generate_sample(&spec, &protos, 3);
        assert_eq!(s.rgb.shape(), &[s.pose.frames - 15, RGB_DIM]);
    }
}
