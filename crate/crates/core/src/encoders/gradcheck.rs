use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Encoders, PoseInput};
use crate::config::ModelConfig;
use crate::data::topology::NUM_KEYPOINTS;
use crate::data::{plan_clips, PoseSequence, RGB_DIM};
use crate::error::Result;
use crate::gradcheck::{check_sampled, probe, randn, GradCheck, COMPOSED_TOL, FD_EPS};
use crate::nn::{Bound, Init, ParamGroup, ParamStore};

/// Entries perturbed per parameter tensor.
const PER_PARAM: usize = 6;

pub(crate) fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        d_group: 8,
        tr_depth: 1,
        tr_heads: 2,
        text_vocab: vocab,
        text_depth: 1,
        clips: 4,
        max_words: 6,
        ..ModelConfig::default()
    }
}

pub(crate) fn random_pose(rng: &mut ChaCha8Rng, frames: usize) -> PoseSequence {
    let kp = (0..frames * NUM_KEYPOINTS)
        .flat_map(|_| [rng.gen_range(0.0..1.0f32), rng.gen_range(0.0..1.0f32), rng.gen_range(0.5..1.0f32)])
        .collect();
    PoseSequence::new(kp, 24.0).expect("valid pose")
}

/// Finite-difference checks of every encoder path on a tiny configuration
/// (`F = 20`, `D_g = 8`, `D = 16`), differentiating the parameters.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_config(9);
    let mut store = ParamStore::<f64>::new();
    let enc = Encoders::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
            group: ParamGroup::Encoder,
        },
        &cfg,
    )?;
    // Nudge zero-initialized biases so every path is exercised off its init.
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let tag = |n: &str| format!("encoders/{n}/seed{seed}");
    let poses = [random_pose(&mut rng, 20), random_pose(&mut rng, 18)];
    let plans = [plan_clips(20, cfg.clips)?, plan_clips(18, cfg.clips)?];
    let input = PoseInput::<f64>::new(&poses, &plans, true)?;
    let rgb = randn(&mut rng, &[2, cfg.clips, RGB_DIM], 1.0);
    let clip_mask = [true, true, true, true, true, true, true, false];
    let tokens = [2, 5, 3, 8, 4, 0];
    let token_mask = [true, true, true, true, true, false];
    let values = store.values();
    let mut out = Vec::new();

    out.push(check_sampled(&tag("pose"), &values, PER_PARAM, seed, FD_EPS, COMPOSED_TOL, |tape, v| {
        let p = Bound::from_vars(tape, v.to_vec());
        probe(enc.pose.forward(&p, &input)?, seed)
    })?);
    out.push(check_sampled(&tag("pose_interaction"), &values, PER_PARAM, seed, FD_EPS, COMPOSED_TOL, |tape, v| {
        let p = Bound::from_vars(tape, v.to_vec());
        let f = enc.pose.forward(&p, &input)?;
        probe(enc.pose_tr.forward(&p, &f, &clip_mask)?, seed)
    })?);
    out.push(check_sampled(&tag("rgb_interaction"), &values, PER_PARAM, seed, FD_EPS, COMPOSED_TOL, |tape, v| {
        let p = Bound::from_vars(tape, v.to_vec());
        let f = enc.rgb.forward(&p, &tape.constant(rgb.clone()))?;
        probe(enc.rgb_tr.forward(&p, &f, &clip_mask)?, seed)
    })?);
    out.push(check_sampled(&tag("text"), &values, PER_PARAM, seed, FD_EPS, COMPOSED_TOL, |tape, v| {
        let p = Bound::from_vars(tape, v.to_vec());
        probe(enc.text.forward(&p, &tokens, &token_mask, 2)?, seed)
    })?);
    Ok(out)
}
