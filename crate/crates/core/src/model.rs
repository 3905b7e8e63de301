//! The assembled dual-stream retrieval model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::config::ModelConfig;
use crate::data::{plan_clips, Batch, LoadedSample, RGB_DIM};
use crate::encoders::{random_pose, Encoders, PoseInput};
use crate::error::{Error, Result};
use crate::fusion::Fusion;
use crate::gradcheck::{check_sampled, GradCheck, COMPOSED_TOL, FD_EPS};
use crate::nn::{Bound, Init, ParamGroup, ParamStore};
use crate::objectives::{joint_loss, Features, LossConfig, LossParts, Temperature};
use crate::scalar::Scalar;

/// Which clip features are matched against text at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Fused,
    Pose,
    Rgb,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Fused, Modality::Pose, Modality::Rgb];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Fused => "fused",
            Modality::Pose => "pose",
            Modality::Rgb => "rgb",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {s:?} (expected fused, pose or rgb)")))
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub loss: LossConfig,
    pub encoders: Encoders,
    pub fusion: Fusion,
    pub temperature: Temperature,
}

/// Clip features `[B, T, D]` of each stream and word features `[B, L, D]`.
pub struct Streams<'t, T: Scalar> {
    pub pose: Var<'t, T>,
    pub rgb: Var<'t, T>,
    pub fused: Var<'t, T>,
    pub text: Var<'t, T>,
}

impl<'t, T: Scalar> Streams<'t, T> {
    pub fn video(&self, m: Modality) -> Var<'t, T> {
        match m {
            Modality::Fused => self.fused,
            Modality::Pose => self.pose,
            Modality::Rgb => self.rgb,
        }
    }
}

impl Model {
    /// Builds the model and its freshly initialized parameters.
    pub fn new<T: Scalar>(cfg: &ModelConfig, loss: &LossConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        loss.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
            group: ParamGroup::Encoder,
        };
        let encoders = Encoders::new(&mut init, cfg)?;
        let fusion = Fusion::new(&mut init, cfg)?;
        init.group = ParamGroup::Encoder;
        let temperature = Temperature::new(&mut init, "logit_scale", loss);
        Ok((
            Self {
                cfg: cfg.clone(),
                loss: loss.clone(),
                encoders,
                fusion,
                temperature,
            },
            store,
        ))
    }

    /// Pose, RGB and fused clip features, each `[B, T, D]`.
    pub fn encode_video<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        batch: &Batch<T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
        let e = &self.encoders;
        let input = PoseInput::new(&batch.poses, &batch.plans, e.pose.anchor_norm)?;
        let pose = e.pose_tr.forward(p, &e.pose.forward(p, &input)?, &batch.clip_mask)?;
        // RGB features are frozen inputs: a constant, never a gradient leaf.
        let rgb_in = p.tape().constant(batch.rgb.clone());
        let rgb = e.rgb_tr.forward(p, &e.rgb.forward(p, &rgb_in)?, &batch.clip_mask)?;
        let fused = self.fusion.forward(p, &pose, &rgb, &batch.clip_mask)?;
        Ok((pose, rgb, fused))
    }

    /// Word features `[B, L, D]` for `B` padded token rows.
    pub fn encode_text<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        tokens: &[usize],
        mask: &[bool],
        batch: usize,
    ) -> Result<Var<'t, T>> {
        self.encoders.text.forward(p, tokens, mask, batch)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, batch: &Batch<T>) -> Result<Streams<'t, T>> {
        let (pose, rgb, fused) = self.encode_video(p, batch)?;
        let text = self.encode_text(p, &batch.tokens, &batch.token_mask, batch.len())?;
        Ok(Streams { pose, rgb, fused, text })
    }

    pub fn loss<'t, T: Scalar>(&self, p: &Bound<'t, T>, batch: &Batch<T>) -> Result<LossParts<'t, T>> {
        let s = self.forward(p, batch)?;
        let f = Features {
            pose: s.pose,
            rgb: s.rgb,
            fused: s.fused,
            text: s.text,
            clip_mask: &batch.clip_mask,
            token_mask: &batch.token_mask,
        };
        joint_loss(&self.loss, self.cfg.normalize, &self.temperature.scale(p), &f)
    }
}

/// Finite-difference check of the whole path (pose encoder, RGB adapter,
/// interaction transformers, fusion, text encoder) into the joint loss, on
/// a tiny configuration, sampling entries of every parameter tensor.
pub fn end_to_end_gradcheck(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE2E);
    let mut cfg = ModelConfig {
        d_model: 16,
        d_group: 8,
        tr_depth: 1,
        tr_heads: 2,
        text_vocab: 9,
        text_depth: 1,
        clips: 4,
        max_words: 6,
        ..ModelConfig::default()
    };
    cfg.fusion.n_neighbors = 3;
    let (model, mut store) = Model::new::<f64>(&cfg, &LossConfig::default(), seed)?;
    for p in store.iter_mut() {
        let spread = if p.name.contains(".offset.") { 0.4 } else { 0.05 };
        for v in p.value.data_mut() {
            *v += rng.gen_range(-spread..spread);
        }
    }
    let samples: Vec<LoadedSample> = [(20usize, vec![2, 5, 3]), (18, vec![4, 8]), (22, vec![6, 7, 2, 3])]
        .into_iter()
        .enumerate()
        .map(|(i, (frames, tokens))| {
            let pose = random_pose(&mut rng, frames);
            let plan = plan_clips(frames, cfg.clips).expect("long enough");
            let rgb = (0..cfg.clips * RGB_DIM).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
            LoadedSample {
                id: format!("s{i}"),
                kept: (0..frames).collect(),
                pose,
                plan,
                rgb,
                tokens,
            }
        })
        .collect();
    let batch = Batch::<f64>::assemble(&samples.iter().collect::<Vec<_>>())?;
    let values = store.values();
    let per = 400usize.div_ceil(values.len()).max(3);
    check_sampled(
        &format!("objectives/end_to_end/seed{seed}"),
        &values,
        per,
        seed,
        FD_EPS,
        COMPOSED_TOL,
        |tape, v| {
            let p = Bound::from_vars(tape, v.to_vec());
            Ok(model.loss(&p, &batch)?.total)
        },
    )
}
