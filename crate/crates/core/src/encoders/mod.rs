//! Pose GCN encoder, RGB adapter, interaction transformers and text encoder.

use crate::autograd::Var;
use crate::config::ModelConfig;
use crate::data::topology::{Group, GroupGraph, KEYPOINT_CHANNELS};
use crate::data::{ClipPlan, PoseSequence, CLIP_LEN, RGB_DIM};
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, LayerNorm, Linear, ParamGroup, ParamId, TransformerStack};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod gradcheck;

pub use gradcheck::gradcheck_suite;
pub(crate) use gradcheck::random_pose;

/// Temporal convolution geometry: two stride-2 convolutions take a 16-frame
/// window to 4 steps, then a mean collapses it to one clip feature.
const CONV_KERNEL: usize = 5;
const CONV_STRIDE: usize = 2;
const CONV_PAD: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One graph convolution `σ(Â f W)` over a keypoint group.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: ParamId,
    /// `Λ^{-1/2}(A + I)Λ^{-1/2}`, computed once.
    pub adj: Tensor<f64>,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, graph: &GroupGraph, d_in: usize, d_out: usize) -> Self {
        Self {
            weight: init.uniform(&format!("{name}.weight"), &[d_in, d_out], d_in),
            adj: graph.normalized_adjacency(),
            activation: Activation::Relu,
        }
    }

    pub fn points(&self) -> usize {
        self.adj.shape()[0]
    }

    /// `f: [..., K, D_in]` → `[..., K, D_out]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, f: &Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        if s.len() < 2 || s[s.len() - 2] != self.points() {
            return Err(Error::shape("gcn", self.adj.shape(), &s));
        }
        let h = f.matmul(&p.var(self.weight))?;
        let h = p.tape().constant(self.adj.cast()).matmul(&h)?;
        Ok(match self.activation {
            Activation::Relu => h.relu(),
            Activation::Identity => h,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GcnStack {
    pub layers: Vec<GcnLayer>,
}

impl GcnStack {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, graph: &GroupGraph, depth: usize, d_out: usize) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let d_in = if i == 0 { KEYPOINT_CHANNELS } else { d_out };
                GcnLayer::new(init, &format!("{name}.{i}"), graph, d_in, d_out)
            })
            .collect();
        Self { layers }
    }

    /// Runs every layer, then mean-pools over keypoints: `[N, K, 3]` → `[N, D_g]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, f: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = *f;
        for l in &self.layers {
            h = l.forward(p, &h)?;
        }
        h.mean_axis(h.shape().len() - 2)
    }
}

/// Keypoint inputs of a batch of videos, split by group, plus the frame
/// index of every position of every clip window. With anchor normalisation
/// coordinates are relative to the group anchor, in units of the video's
/// mean shoulder width.
#[derive(Clone, Debug)]
pub struct PoseInput<T> {
    /// `[ΣF, K_g, 3]` per group, in [`Group::ALL`] order.
    pub groups: [Tensor<T>; 3],
    /// `B * clips * 16` indices into the concatenated frames.
    pub windows: Vec<usize>,
    pub batch: usize,
    pub clips: usize,
}

impl<T: Scalar> PoseInput<T> {
    pub fn new(poses: &[PoseSequence], plans: &[ClipPlan], anchor_norm: bool) -> Result<Self> {
        if poses.len() != plans.len() || poses.is_empty() {
            return Err(Error::shape("pose input", &[poses.len()], &[plans.len()]));
        }
        let clips = plans[0].len();
        let total: usize = poses.iter().map(|p| p.frames).sum();
        let mut groups = Group::ALL.map(|g| Vec::with_capacity(total * g.range().len() * KEYPOINT_CHANNELS));
        let mut windows = Vec::with_capacity(poses.len() * clips * CLIP_LEN);
        let mut offset = 0;
        for (pose, plan) in poses.iter().zip(plans) {
            if plan.len() != clips {
                return Err(Error::shape("pose input clips", &[clips], &[plan.len()]));
            }
            let scale = if anchor_norm { pose.body_scale() } else { 1.0 };
            for f in 0..pose.frames {
                for (gi, g) in Group::ALL.iter().enumerate() {
                    let anchor = pose.point(f, g.range().start + g.anchor());
                    for k in g.range() {
                        let [x, y, c] = pose.point(f, k);
                        let (x, y) = if anchor_norm {
                            ((x - anchor[0]) as f64 / scale, (y - anchor[1]) as f64 / scale)
                        } else {
                            (x as f64, y as f64)
                        };
                        groups[gi].extend([T::lit(x), T::lit(y), T::lit(c as f64)]);
                    }
                }
            }
            for &s in &plan.starts {
                if s + CLIP_LEN > pose.frames {
                    return Err(Error::invalid(
                        "pose input",
                        format!("clip at {s} runs past {} frames", pose.frames),
                    ));
                }
                windows.extend((s..s + CLIP_LEN).map(|f| offset + f));
            }
            offset += pose.frames;
        }
        let mut it = groups.into_iter().zip(Group::ALL);
        let mut next = || -> Result<Tensor<T>> {
            let (data, g) = it.next().expect("three groups");
            Tensor::new([total, g.range().len(), KEYPOINT_CHANNELS], data)
        };
        Ok(Self {
            groups: [next()?, next()?, next()?],
            windows,
            batch: poses.len(),
            clips,
        })
    }
}

/// GCN per keypoint group (hands share one stack), window gather and
/// temporal convolutions producing one feature per clip.
#[derive(Clone, Debug)]
pub struct PoseEncoder {
    pub hand: GcnStack,
    pub body: GcnStack,
    pub conv1: Linear,
    pub conv2: Linear,
    pub proj: Linear,
    pub anchor_norm: bool,
}

impl PoseEncoder {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Self {
        let (dg, d) = (cfg.d_group, cfg.d_model);
        Self {
            hand: GcnStack::new(init, &format!("{name}.hand_gcn"), &Group::LeftHand.graph(), cfg.gcn_depth, dg),
            body: GcnStack::new(init, &format!("{name}.body_gcn"), &Group::Body.graph(), cfg.gcn_depth, dg),
            conv1: Linear::new(init, &format!("{name}.conv1"), CONV_KERNEL * 3 * dg, d, true),
            conv2: Linear::new(init, &format!("{name}.conv2"), CONV_KERNEL * d, d, true),
            proj: Linear::new(init, &format!("{name}.proj"), d, d, true),
            anchor_norm: cfg.anchor_norm,
        }
    }

    /// Per-frame features `[ΣF, 3·D_g]`: left hand, right hand, body.
    pub fn frame_features<'t, T: Scalar>(&self, p: &Bound<'t, T>, input: &PoseInput<T>) -> Result<Var<'t, T>> {
        let tape = p.tape();
        let [l, r, b] = &input.groups;
        let fl = self.hand.forward(p, &tape.constant(l.clone()))?;
        let fr = self.hand.forward(p, &tape.constant(r.clone()))?;
        let fb = self.body.forward(p, &tape.constant(b.clone()))?;
        Var::concat(&[fl, fr, fb], 1)
    }

    /// Clip features `f^{p'}`: `[B, T, D]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, input: &PoseInput<T>) -> Result<Var<'t, T>> {
        let frames = self.frame_features(p, input)?;
        let width = frames.shape()[1];
        let n = input.batch * input.clips;
        let w = frames.index_select(0, &input.windows)?.reshape(&[n, CLIP_LEN, width])?;
        let h = self.conv1.forward(p, &w.unfold1d(CONV_KERNEL, CONV_STRIDE, CONV_PAD)?)?.relu();
        let h = self.conv2.forward(p, &h.unfold1d(CONV_KERNEL, CONV_STRIDE, CONV_PAD)?)?.relu();
        let h = self.proj.forward(p, &h.mean_axis(1)?)?;
        let d = h.shape()[1];
        h.reshape(&[input.batch, input.clips, d])
    }
}

/// `f^{p'}` of a single video: `[T, D]`.
pub fn encode_pose<'t, T: Scalar>(
    enc: &PoseEncoder,
    p: &Bound<'t, T>,
    pose: &PoseSequence,
    plan: &ClipPlan,
) -> Result<Var<'t, T>> {
    let input = PoseInput::new(std::slice::from_ref(pose), std::slice::from_ref(plan), enc.anchor_norm)?;
    let out = enc.forward(p, &input)?;
    let s = out.shape();
    out.reshape(&s[1..])
}

/// Trainable map from frozen 1024-dim RGB features to `D`.
#[derive(Clone, Debug)]
pub struct RgbAdapter {
    pub proj: Linear,
}

impl RgbAdapter {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize) -> Self {
        Self {
            proj: Linear::new(init, &format!("{name}.proj"), RGB_DIM, d, true),
        }
    }

    /// `feats: [..., T, 1024]` (a constant) → `[..., T, D]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, feats: &Var<'t, T>) -> Result<Var<'t, T>> {
        if feats.shape().last() != Some(&RGB_DIM) {
            return Err(Error::shape("rgb adapter", &[RGB_DIM], &feats.shape()));
        }
        self.proj.forward(p, feats)
    }
}

/// Adds rows `0..T` of a `[max_len, D]` embedding table to `x: [B, T, D]`.
fn add_positions<'t, T: Scalar>(p: &Bound<'t, T>, table: ParamId, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    let pos = p.var(table);
    let max_len = pos.shape()[0];
    if s.len() != 3 || s[1] > max_len || s[2] != pos.shape()[1] {
        return Err(Error::shape("positional embedding", &pos.shape(), &s));
    }
    let pos = pos.narrow(0, 0, s[1])?.reshape(&[s[1] * s[2]])?;
    x.reshape(&[s[0], s[1] * s[2]])?.add_bias(&pos)?.reshape(&s)
}

/// Learned positions followed by a mask-aware transformer stack.
#[derive(Clone, Debug)]
pub struct InteractionTransformer {
    pub pos: ParamId,
    pub stack: TransformerStack,
}

impl InteractionTransformer {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            pos: init.normal(&format!("{name}.pos"), &[cfg.clips, cfg.d_model], 0.02),
            stack: TransformerStack::new(init, &format!("{name}.blocks"), cfg.d_model, cfg.tr_heads, cfg.tr_depth)?,
        })
    }

    /// `x: [B, T, D]`, `mask: [B * T]`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return Err(Error::shape("interaction mask", &s, &[mask.len()]));
        }
        let h = add_positions(p, self.pos, x)?;
        self.stack.forward(p, &h, mask)
    }
}

/// Token embedding, learned positions, transformer stack, final norm and
/// projection to `D`.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embed: ParamId,
    pub pos: ParamId,
    pub stack: TransformerStack,
    pub ln: LayerNorm,
    pub proj: Linear,
    pub vocab: usize,
}

impl TextEncoder {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            embed: init.normal(&format!("{name}.embed"), &[cfg.text_vocab, d], 1.0),
            pos: init.normal(&format!("{name}.pos"), &[cfg.max_words, d], 0.02),
            stack: TransformerStack::new(init, &format!("{name}.blocks"), d, cfg.tr_heads, cfg.text_depth)?,
            ln: LayerNorm::new(init, &format!("{name}.ln"), d),
            proj: Linear::new(init, &format!("{name}.proj"), d, d, true),
            vocab: cfg.text_vocab,
        })
    }

    /// `tokens`, `mask`: `[B * L]` → `f^w: [B, L, D]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        tokens: &[usize],
        mask: &[bool],
        batch: usize,
    ) -> Result<Var<'t, T>> {
        if batch == 0 || tokens.len() % batch != 0 || mask.len() != tokens.len() {
            return Err(Error::shape("text tokens", &[batch, tokens.len()], &[mask.len()]));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(Error::invalid("text encoder", format!("token id {bad} outside vocabulary of {}", self.vocab)));
        }
        let l = tokens.len() / batch;
        let emb = p.var(self.embed).index_select(0, tokens)?;
        let d = emb.shape()[1];
        let h = add_positions(p, self.pos, &emb.reshape(&[batch, l, d])?)?;
        let h = self.stack.forward(p, &h, mask)?;
        self.proj.forward(p, &self.ln.forward(p, &h)?)
    }
}

/// All encoders of the dual-stream model.
#[derive(Clone, Debug)]
pub struct Encoders {
    pub pose: PoseEncoder,
    pub rgb: RgbAdapter,
    pub pose_tr: InteractionTransformer,
    pub rgb_tr: InteractionTransformer,
    pub text: TextEncoder,
}

impl Encoders {
    /// Pose encoder and RGB adapter go in the encoder learning-rate group,
    /// the transformers and text encoder in the transformer group.
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        init.group = ParamGroup::Encoder;
        let pose = PoseEncoder::new(init, "pose", cfg);
        let rgb = RgbAdapter::new(init, "rgb", cfg.d_model);
        init.group = ParamGroup::Transformer;
        let pose_tr = InteractionTransformer::new(init, "pose_tr", cfg)?;
        let rgb_tr = InteractionTransformer::new(init, "rgb_tr", cfg)?;
        let text = TextEncoder::new(init, "text", cfg)?;
        Ok(Self {
            pose,
            rgb,
            pose_tr,
            rgb_tr,
            text,
        })
    }
}

#[cfg(test)]
mod tests;
