use std::path::Path;

use super::topology::{body, BODY, KEYPOINT_CHANNELS, LEFT_HAND, NUM_KEYPOINTS, RIGHT_HAND};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// Frames that must survive filtering: one full clip window.
pub const CLIP_LEN: usize = 16;
pub const DEFAULT_MIN_CONF: f32 = 0.3;

/// Keypoint track of one video: `[frames × 49 × (x, y, confidence)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub keypoints: Vec<f32>,
    pub frames: usize,
    pub fps: f32,
}

const FRAME_LEN: usize = NUM_KEYPOINTS * KEYPOINT_CHANNELS;

impl PoseSequence {
    pub fn new(keypoints: Vec<f32>, fps: f32) -> Result<Self> {
        if keypoints.is_empty() || keypoints.len() % FRAME_LEN != 0 {
            return Err(Error::invalid(
                "pose",
                format!("{} values is not a whole number of {FRAME_LEN}-value frames", keypoints.len()),
            ));
        }
        let seq = Self {
            frames: keypoints.len() / FRAME_LEN,
            keypoints,
            fps,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, kp) in self.keypoints.chunks(KEYPOINT_CHANNELS).enumerate() {
            if !kp[0].is_finite() || !kp[1].is_finite() {
                return Err(Error::NonFinite(format!("pose keypoint {i}")));
            }
            if !(0.0..=1.0).contains(&kp[2]) {
                return Err(Error::invalid("pose", format!("confidence {} at keypoint {i}", kp[2])));
            }
        }
        Ok(())
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        &self.keypoints[f * FRAME_LEN..(f + 1) * FRAME_LEN]
    }

    /// `(x, y, confidence)` of keypoint `k` in frame `f`.
    pub fn point(&self, f: usize, k: usize) -> [f32; 3] {
        let p = &self.frame(f)[k * 3..k * 3 + 3];
        [p[0], p[1], p[2]]
    }

    fn mean_confidence(&self, f: usize, range: std::ops::Range<usize>) -> f32 {
        let n = range.len() as f32;
        range.map(|k| self.point(f, k)[2]).sum::<f32>() / n
    }

    /// Mean shoulder width over frames where both shoulders are detected.
    /// Falls back to 1 when no frame qualifies.
    pub fn body_scale(&self) -> f64 {
        let (l, r) = (BODY.start + body::LEFT_SHOULDER, BODY.start + body::RIGHT_SHOULDER);
        let (mut sum, mut n) = (0.0, 0usize);
        for f in 0..self.frames {
            let (a, b) = (self.point(f, l), self.point(f, r));
            if a[2] > 0.0 && b[2] > 0.0 {
                let w = ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64);
                if w > 1e-6 {
                    sum += w;
                    n += 1;
                }
            }
        }
        if n == 0 { 1.0 } else { sum / n as f64 }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([self.frames, NUM_KEYPOINTS, KEYPOINT_CHANNELS], self.keypoints.clone()).expect("pose shape")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensor(path, &self.to_tensor())
    }

    pub fn read(path: impl AsRef<Path>, fps: f32) -> Result<Self> {
        let t: Tensor<f32> = read_tensor(path.as_ref())?;
        if t.rank() != 3 || t.shape()[1] != NUM_KEYPOINTS || t.shape()[2] != KEYPOINT_CHANNELS {
            return Err(Error::Format {
                path: path.as_ref().to_path_buf(),
                msg: format!("pose tensor shape {:?}, expected [F, 49, 3]", t.shape()),
            });
        }
        Self::new(t.into_data(), fps)
    }
}

/// Drops frames where the mean confidence of either hand is below
/// `min_conf`. Returns the kept frames and their original indices.
pub fn filter_frames(p: &PoseSequence, min_conf: f32) -> Result<(PoseSequence, Vec<usize>)> {
    if !(0.0..=1.0).contains(&min_conf) {
        return Err(Error::invalid("filter_frames", format!("min_conf {min_conf} outside [0, 1]")));
    }
    let kept: Vec<usize> = (0..p.frames)
        .filter(|&f| p.mean_confidence(f, LEFT_HAND) >= min_conf && p.mean_confidence(f, RIGHT_HAND) >= min_conf)
        .collect();
    if kept.len() < CLIP_LEN {
        return Err(Error::TooShort {
            kept: kept.len(),
            needed: CLIP_LEN,
        });
    }
    let mut keypoints = Vec::with_capacity(kept.len() * FRAME_LEN);
    for &f in &kept {
        keypoints.extend_from_slice(p.frame(f));
    }
    Ok((
        PoseSequence {
            keypoints,
            frames: kept.len(),
            fps: p.fps,
        },
        kept,
    ))
}
