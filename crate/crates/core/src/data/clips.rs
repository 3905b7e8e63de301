use super::pose::CLIP_LEN;
use crate::error::{Error, Result};

/// Which 16-frame windows (stride 1) become the `T` clips of a video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipPlan {
    /// Number of candidate window starts, `frames - 15`.
    pub candidates: usize,
    /// Start frame (in retained-frame indices) of each of the `T` clips.
    pub starts: Vec<usize>,
    /// False for padding clips appended when fewer than `T` candidates exist.
    pub mask: Vec<bool>,
}

impl ClipPlan {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Picks `t` window starts at equal intervals over `frames - 15` candidates:
/// `round(i * (C - 1) / (t - 1))`. With fewer candidates than clips every
/// candidate is used and the last one is repeated under a false mask.
pub fn plan_clips(frames: usize, t: usize) -> Result<ClipPlan> {
    if frames < CLIP_LEN {
        return Err(Error::TooShort {
            kept: frames,
            needed: CLIP_LEN,
        });
    }
    if t == 0 {
        return Err(Error::invalid("plan_clips", "clip count must be at least 1"));
    }
    let c = frames - CLIP_LEN + 1;
    let (starts, mask) = if c < t {
        let mut starts: Vec<usize> = (0..c).collect();
        starts.resize(t, c - 1);
        let mask = (0..t).map(|i| i < c).collect();
        (starts, mask)
    } else if t == 1 {
        (vec![(c - 1) / 2], vec![true])
    } else {
        let step = (c - 1) as f64 / (t - 1) as f64;
        let starts = (0..t).map(|i| (i as f64 * step).round() as usize).collect();
        (starts, vec![true; t])
    };
    Ok(ClipPlan {
        candidates: c,
        starts,
        mask,
    })
}
