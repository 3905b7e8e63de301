//! Cross gloss attention fusion of the pose and RGB clip streams, and the
//! baseline fusion variants it is compared against.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamGroup, ParamId, TransformerStack};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod gradcheck;

pub use gradcheck::gradcheck_suite;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    Cgaf,
    AddMlp,
    ConcateMlp,
    ConcateTrans,
    CrossAtten,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [
        FusionVariant::Cgaf,
        FusionVariant::AddMlp,
        FusionVariant::ConcateMlp,
        FusionVariant::ConcateTrans,
        FusionVariant::CrossAtten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Cgaf => "cgaf",
            FusionVariant::AddMlp => "add_mlp",
            FusionVariant::ConcateMlp => "concate_mlp",
            FusionVariant::ConcateTrans => "concate_trans",
            FusionVariant::CrossAtten => "cross_atten",
        }
    }
}

impl std::str::FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub variant: FusionVariant,
    /// Sampling points `N` per query.
    pub n_neighbors: usize,
    /// Offsets are clipped to `[-offset_clip, offset_clip]`; defaults to `N`.
    pub offset_clip: Option<f64>,
    /// Divide `q·k` by `sqrt(d_head)`.
    pub scaled_dot: bool,
    pub heads: usize,
    /// Attention layers per stream.
    pub layers: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            variant: FusionVariant::Cgaf,
            n_neighbors: 7,
            offset_clip: None,
            scaled_dot: true,
            heads: 1,
            layers: 2,
        }
    }
}

impl FusionConfig {
    pub fn clip_radius(&self) -> f64 {
        self.offset_clip.unwrap_or(self.n_neighbors as f64)
    }

    pub fn validate(&self, d: usize, clips: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("fusion config: {m}")));
        if self.n_neighbors == 0 {
            return bad("n_neighbors must be at least 1".into());
        }
        if self.variant == FusionVariant::Cgaf && self.n_neighbors > clips {
            return bad(format!("n_neighbors {} exceeds {clips} clips", self.n_neighbors));
        }
        if !(self.clip_radius().is_finite() && self.clip_radius() >= 0.0) {
            return bad(format!("offset_clip {} must be finite and >= 0", self.clip_radius()));
        }
        if self.heads == 0 || d % self.heads != 0 {
            return bad(format!("width {d} not divisible by {} heads", self.heads));
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-sample count of valid clips; the mask must be a prefix of trues.
pub fn valid_lengths(mask: &[bool], batch: usize) -> Result<Vec<usize>> {
    if batch == 0 || mask.len() % batch != 0 {
        return Err(Error::shape("clip mask", &[batch], &[mask.len()]));
    }
    let t = mask.len() / batch;
    mask.chunks(t)
        .map(|row| {
            let n = row.iter().take_while(|&&m| m).count();
            if n == 0 {
                Err(Error::invalid("gloss attention", "sample has no valid clips"))
            } else if row[n..].iter().any(|&m| m) {
                Err(Error::invalid("gloss attention", "clip mask must be a prefix"))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Intermediate values of one gloss-attention pass.
pub struct GlossAttention<'t, T: Scalar> {
    /// Layer output after residual and feed-forward: `[B, T, D]`.
    pub out: Var<'t, T>,
    /// Attention result `h` before the output projection: `[B, T, D]`.
    pub raw: Var<'t, T>,
    /// Wrapped sampling positions `P̂`: `[B, heads, T, N]`.
    pub positions: Var<'t, T>,
    /// Softmax weights over the `N` samples: `[B * heads * T, N]`.
    pub weights: Var<'t, T>,
    /// Projected queries, keys and values: `[B, T, D]`.
    pub q: Var<'t, T>,
    pub k: Var<'t, T>,
    pub v: Var<'t, T>,
}

/// Local cross attention: each query clip attends to `N` points sampled by
/// interpolation around its own position, shifted by learned offsets.
#[derive(Clone, Debug)]
pub struct GlossAttentionLayer {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    /// `W_o: [D, heads·N]`, no bias.
    pub offset: Linear,
    pub out: Linear,
    pub ln_ff: LayerNorm,
    pub ff: Mlp,
    pub n: usize,
    pub heads: usize,
    pub clip: f64,
    pub scaled_dot: bool,
}

impl GlossAttentionLayer {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, cfg: &FusionConfig) -> Self {
        let n = cfg.n_neighbors;
        let offset = Linear {
            weight: init.constant(&format!("{name}.offset.weight"), &[d, cfg.heads * n], 0.0),
            bias: None,
            d_in: d,
            d_out: cfg.heads * n,
        };
        Self {
            ln_q: LayerNorm::new(init, &format!("{name}.ln_q"), d),
            ln_kv: LayerNorm::new(init, &format!("{name}.ln_kv"), d),
            q: Linear::new(init, &format!("{name}.q"), d, d, true),
            k: Linear::new(init, &format!("{name}.k"), d, d, true),
            v: Linear::new(init, &format!("{name}.v"), d, d, true),
            offset,
            out: Linear::new(init, &format!("{name}.out"), d, d, true),
            ln_ff: LayerNorm::new(init, &format!("{name}.ln_ff"), d),
            ff: Mlp::new(init, &format!("{name}.ff"), &[d, 4 * d, d]),
            n,
            heads: cfg.heads,
            clip: cfg.clip_radius(),
            scaled_dot: cfg.scaled_dot,
        }
    }

    /// Constant positions `P[t, i] = t - floor(N/2) + i`, repeated per batch
    /// entry and head: `[B, T, heads·N]`.
    pub fn base_positions<T: Scalar>(&self, batch: usize, t: usize) -> Tensor<T> {
        let hn = self.heads * self.n;
        let mut data = Vec::with_capacity(batch * t * hn);
        for _ in 0..batch {
            for ti in 0..t {
                for _ in 0..self.heads {
                    for i in 0..self.n {
                        data.push(T::lit(ti as f64 - (self.n / 2) as f64 + i as f64));
                    }
                }
            }
        }
        Tensor::new([batch, t, hn], data).expect("positions")
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        f_q: &Var<'t, T>,
        f_kv: &Var<'t, T>,
        valid: &[usize],
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_detailed(p, f_q, f_kv, valid)?.out)
    }

    /// `f_q`, `f_kv`: `[B, T, D]`; `valid[b]` clips of sample `b` are real.
    pub fn forward_detailed<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        f_q: &Var<'t, T>,
        f_kv: &Var<'t, T>,
        valid: &[usize],
    ) -> Result<GlossAttention<'t, T>> {
        let s = f_q.shape();
        if s.len() != 3 || f_kv.shape() != s {
            return Err(Error::shape("gloss attention", &s, &f_kv.shape()));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        if valid.len() != b || valid.iter().any(|&v| v == 0 || v > t) {
            return Err(Error::invalid("gloss attention", format!("valid lengths {valid:?} for {b}x{t} clips")));
        }
        if self.n > t {
            return Err(Error::Config(format!("{} neighbours exceed {t} clips", self.n)));
        }
        let (h, n) = (self.heads, self.n);
        let dh = d / h;
        let nq = self.ln_q.forward(p, f_q)?;
        let nkv = self.ln_kv.forward(p, f_kv)?;
        let q = self.q.forward(p, &nq)?;
        let k = self.k.forward(p, &nkv)?;
        let v = self.v.forward(p, &nkv)?;

        let c = T::lit(self.clip);
        let offsets = self.offset.forward(p, &nq)?.clamp(-c, c);
        let base = p.tape().constant(self.base_positions(b, t));
        let periods: Vec<usize> = valid.to_vec();
        let positions = base
            .add(&offsets)?
            .wrap(&periods)?
            .reshape(&[b, t, h, n])?
            .permute(&[0, 2, 1, 3])?;
        let head_periods: Vec<usize> = valid.iter().flat_map(|&v| std::iter::repeat(v).take(h)).collect();
        let heads = |x: &Var<'t, T>| -> Result<Var<'t, T>> { x.reshape(&[b, t, h, dh])?.permute(&[0, 2, 1, 3]) };
        let rows = b * h * t;
        let k_hat = heads(&k)?.interp_gather(&positions, Some(&head_periods))?.reshape(&[rows, n, dh])?;
        let v_hat = heads(&v)?.interp_gather(&positions, Some(&head_periods))?.reshape(&[rows, n, dh])?;
        let mut scores = k_hat.matmul(&heads(&q)?.reshape(&[rows, dh, 1])?)?.reshape(&[rows, n])?;
        if self.scaled_dot {
            scores = scores.scale(T::one() / T::from_usize_lossy(dh).sqrt());
        }
        let weights = scores.softmax(1)?;
        let raw = weights
            .reshape(&[rows, 1, n])?
            .matmul(&v_hat)?
            .reshape(&[b, h, t, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, d])?;
        let x = f_q.add(&self.out.forward(p, &raw)?)?;
        let out = x.add(&self.ff.forward(p, &self.ln_ff.forward(p, &x)?)?)?;
        Ok(GlossAttention {
            out,
            raw,
            positions,
            weights,
            q,
            k,
            v,
        })
    }
}

/// Two-stage fusion: paired gloss-attention stacks, then an MLP over the
/// concatenated streams with both streams added back.
#[derive(Clone, Debug)]
pub struct Cgaf {
    /// Pose queries over RGB keys/values.
    pub pose_layers: Vec<GlossAttentionLayer>,
    /// RGB queries over pose keys/values.
    pub rgb_layers: Vec<GlossAttentionLayer>,
    /// `2D → 2D → D`.
    pub head: Mlp,
}

pub struct CgafOutput<'t, T: Scalar> {
    pub fused: Var<'t, T>,
    pub pose_hat: Var<'t, T>,
    pub rgb_hat: Var<'t, T>,
}

impl Cgaf {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, cfg: &FusionConfig) -> Self {
        let pose_layers = (0..cfg.layers)
            .map(|i| GlossAttentionLayer::new(init, &format!("{name}.pose.{i}"), d, cfg))
            .collect();
        let rgb_layers = (0..cfg.layers)
            .map(|i| GlossAttentionLayer::new(init, &format!("{name}.rgb.{i}"), d, cfg))
            .collect();
        Self {
            pose_layers,
            rgb_layers,
            head: Mlp::new(init, &format!("{name}.head"), &[2 * d, 2 * d, d]),
        }
    }

    /// Both streams are updated from the previous layer's outputs together.
    pub fn forward_detailed<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        f_p: &Var<'t, T>,
        f_r: &Var<'t, T>,
        valid: &[usize],
    ) -> Result<CgafOutput<'t, T>> {
        let (mut hp, mut hr) = (*f_p, *f_r);
        for (lp, lr) in self.pose_layers.iter().zip(&self.rgb_layers) {
            let np = lp.forward(p, &hp, &hr, valid)?;
            let nr = lr.forward(p, &hr, &hp, valid)?;
            (hp, hr) = (np, nr);
        }
        let fused = self
            .head
            .forward(p, &Var::concat(&[hp, hr], 2)?)?
            .add(&hp)?
            .add(&hr)?;
        Ok(CgafOutput {
            fused,
            pose_hat: hp,
            rgb_hat: hr,
        })
    }
}

/// Pre-norm global cross attention followed by a feed-forward block.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: Mlp,
}

impl CrossBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln_q: LayerNorm::new(init, &format!("{name}.ln_q"), d),
            ln_kv: LayerNorm::new(init, &format!("{name}.ln_kv"), d),
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads)?,
            ln_ff: LayerNorm::new(init, &format!("{name}.ln_ff"), d),
            ff: Mlp::new(init, &format!("{name}.ff"), &[d, 4 * d, d]),
        })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: &Var<'t, T>,
        kv: &Var<'t, T>,
        mask: &[bool],
    ) -> Result<Var<'t, T>> {
        let a = self.attn.forward(p, &self.ln_q.forward(p, x)?, &self.ln_kv.forward(p, kv)?, mask)?;
        let x = x.add(&a)?;
        x.add(&self.ff.forward(p, &self.ln_ff.forward(p, &x)?)?)
    }
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Cgaf(Cgaf),
    /// `MLP(f_p + f_r)`.
    AddMlp(Mlp),
    /// `MLP([f_p, f_r])`.
    ConcateMlp(Mlp),
    /// Streams joined along time (with a learned stream embedding), one
    /// transformer pass, split and added.
    ConcateTrans { stream: ParamId, stack: TransformerStack },
    /// Bidirectional global cross attention, then added.
    CrossAtten { pose: Vec<CrossBlock>, rgb: Vec<CrossBlock> },
}

impl Fusion {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        init.group = ParamGroup::Encoder;
        let d = cfg.d_model;
        let fc = &cfg.fusion;
        Ok(match fc.variant {
            FusionVariant::Cgaf => Fusion::Cgaf(Cgaf::new(init, "fusion", d, fc)),
            FusionVariant::AddMlp => Fusion::AddMlp(Mlp::new(init, "fusion.mlp", &[d, 2 * d, d])),
            FusionVariant::ConcateMlp => Fusion::ConcateMlp(Mlp::new(init, "fusion.mlp", &[2 * d, 2 * d, d])),
            FusionVariant::ConcateTrans => Fusion::ConcateTrans {
                stream: init.normal("fusion.stream", &[2, d], 0.02),
                stack: TransformerStack::new(init, "fusion.blocks", d, fc.heads, 1)?,
            },
            FusionVariant::CrossAtten => Fusion::CrossAtten {
                pose: (0..fc.layers)
                    .map(|i| CrossBlock::new(init, &format!("fusion.pose.{i}"), d, fc.heads))
                    .collect::<Result<_>>()?,
                rgb: (0..fc.layers)
                    .map(|i| CrossBlock::new(init, &format!("fusion.rgb.{i}"), d, fc.heads))
                    .collect::<Result<_>>()?,
            },
        })
    }

    pub fn variant(&self) -> FusionVariant {
        match self {
            Fusion::Cgaf(_) => FusionVariant::Cgaf,
            Fusion::AddMlp(_) => FusionVariant::AddMlp,
            Fusion::ConcateMlp(_) => FusionVariant::ConcateMlp,
            Fusion::ConcateTrans { .. } => FusionVariant::ConcateTrans,
            Fusion::CrossAtten { .. } => FusionVariant::CrossAtten,
        }
    }

    /// `f_p`, `f_r`: `[B, T, D]`, `mask`: `[B * T]` → `f^v: [B, T, D]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        f_p: &Var<'t, T>,
        f_r: &Var<'t, T>,
        mask: &[bool],
    ) -> Result<Var<'t, T>> {
        let s = f_p.shape();
        if s.len() != 3 || f_r.shape() != s || mask.len() != s[0] * s[1] {
            return Err(Error::shape("fusion", &s, &f_r.shape()));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        match self {
            Fusion::Cgaf(c) => Ok(c.forward_detailed(p, f_p, f_r, &valid_lengths(mask, b)?)?.fused),
            Fusion::AddMlp(m) => m.forward(p, &f_p.add(f_r)?),
            Fusion::ConcateMlp(m) => m.forward(p, &Var::concat(&[*f_p, *f_r], 2)?),
            Fusion::ConcateTrans { stream, stack } => {
                let e = p.var(*stream);
                let tag = |x: &Var<'t, T>, i: usize| -> Result<Var<'t, T>> { x.add_bias(&e.narrow(0, i, 1)?.reshape(&[d])?) };
                let joined = Var::concat(&[tag(f_p, 0)?, tag(f_r, 1)?], 1)?;
                let mut joint_mask = Vec::with_capacity(2 * mask.len());
                for row in mask.chunks(t) {
                    joint_mask.extend_from_slice(row);
                    joint_mask.extend_from_slice(row);
                }
                let h = stack.forward(p, &joined, &joint_mask)?;
                h.narrow(1, 0, t)?.add(&h.narrow(1, t, t)?)
            }
            Fusion::CrossAtten { pose, rgb } => {
                let (mut hp, mut hr) = (*f_p, *f_r);
                for (bp, br) in pose.iter().zip(rgb) {
                    let np = bp.forward(p, &hp, &hr, mask)?;
                    let nr = br.forward(p, &hr, &hp, mask)?;
                    (hp, hr) = (np, nr);
                }
                hp.add(&hr)
            }
        }
    }
}

#[cfg(test)]
mod tests;
