//! Parameter storage and the shared layers every encoder is built from.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Pose encoder, RGB adapter, fusion module and temperature.
    Encoder,
    /// Interaction transformers and the text encoder.
    Transformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub group: ParamGroup,
}

/// Ordered, named parameter collection. Order is creation order and is the
/// order used for checkpoints and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, group: ParamGroup) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, group });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p.value.clone())).collect(),
            tape,
        }
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect(),
            tape,
        }
    }

    /// Replaces values from `(name, tensor)` pairs; every stored name must
    /// be supplied with a matching shape.
    pub fn load(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in entries {
            let i = *self
                .index
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint has unknown parameter {name}")))?;
            if t.shape() != self.params[i].value.shape() {
                return Err(Error::Config(format!(
                    "parameter {name}: checkpoint shape {:?} vs model {:?}",
                    t.shape(),
                    self.params[i].value.shape()
                )));
            }
            self.params[i].value = t;
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("checkpoint is missing parameter {}", self.params[i].name)));
        }
        Ok(())
    }
}

/// Parameters of a [`ParamStore`] registered on one tape.
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
    tape: &'t Tape<T>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    /// Wraps vars created elsewhere, in store order.
    pub fn from_vars(tape: &'t Tape<T>, vars: Vec<Var<'t, T>>) -> Self {
        Self { vars, tape }
    }

    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }
}

/// Parameter factory: deterministic initialisation under a name prefix.
pub struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub group: ParamGroup,
}

impl<T: Scalar> Init<'_, T> {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(self.rng.gen_range(-bound..bound))).collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data).expect("shape"), self.group)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = self.rng.sample(rand_distr::StandardNormal);
                T::lit(z * std)
            })
            .collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data).expect("shape"), self.group)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape.to_vec(), T::lit(value)), self.group)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let weight = init.uniform(&format!("{name}.weight"), &[d_in, d_out], d_in);
        let bias = bias.then(|| init.constant(&format!("{name}.bias"), &[d_out], 0.0));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(&p.var(self.weight))?;
        match self.bias {
            Some(b) => y.add_bias(&p.var(b)),
            None => Ok(y),
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize) -> Self {
        Self {
            gain: init.constant(&format!("{name}.gain"), &[d], 1.0),
            bias: init.constant(&format!("{name}.bias"), &[d], 0.0),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(&p.var(self.gain), &p.var(self.bias), T::lit(LN_EPS))
    }
}

/// Linear layers with GELU between them (not after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [d_in, hidden..., d_out]`.
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(init, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = *x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(p, &h)?;
            if i + 1 < self.layers.len() {
                h = h.gelu();
            }
        }
        Ok(h)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }
}

/// Expands a `[B, Tk]` key mask to `[B, heads, Tq, Tk]`.
pub fn attention_mask(key_mask: &[bool], batch: usize, heads: usize, tq: usize, tk: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(batch * heads * tq * tk);
    for b in 0..batch {
        let row = &key_mask[b * tk..(b + 1) * tk];
        for _ in 0..heads * tq {
            out.extend_from_slice(row);
        }
    }
    out
}

/// Multi-head scaled dot-product attention with a key-padding mask.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("{name}: width {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(init, &format!("{name}.q"), d, d, true),
            k: Linear::new(init, &format!("{name}.k"), d, d, true),
            v: Linear::new(init, &format!("{name}.v"), d, d, true),
            o: Linear::new(init, &format!("{name}.o"), d, d, true),
            heads,
        })
    }

    /// `xq: [B, Tq, D]`, `xkv: [B, Tk, D]`, `key_mask: [B * Tk]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        xq: &Var<'t, T>,
        xkv: &Var<'t, T>,
        key_mask: &[bool],
    ) -> Result<Var<'t, T>> {
        let qs = xq.shape();
        let ks = xkv.shape();
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(Error::shape("attention", &qs, &ks));
        }
        let (b, tq, d) = (qs[0], qs[1], qs[2]);
        let tk = ks[1];
        if key_mask.len() != b * tk {
            return Err(Error::shape("attention mask", &[b, tk], &[key_mask.len()]));
        }
        let h = self.heads;
        let dh = d / h;
        let split = |x: Var<'t, T>, t: usize| -> Result<Var<'t, T>> { x.reshape(&[b, t, h, dh])?.permute(&[0, 2, 1, 3]) };
        let q = split(self.q.forward(p, xq)?, tq)?;
        let k = split(self.k.forward(p, xkv)?, tk)?.transpose()?;
        let v = split(self.v.forward(p, xkv)?, tk)?;
        let scores = q.matmul(&k)?.scale(T::one() / T::from_usize_lossy(dh).sqrt());
        let mask = attention_mask(key_mask, b, h, tq, tk);
        let attn = scores.masked_softmax(3, Some(&mask))?;
        let ctx = attn.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, tq, d])?;
        self.o.forward(p, &ctx)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: Mlp,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize, ff_mult: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads)?,
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), d),
            ff: Mlp::new(init, &format!("{name}.ff"), &[d, d * ff_mult, d]),
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
        let n = self.ln1.forward(p, x)?;
        let x = x.add(&self.attn.forward(p, &n, &n, mask)?)?;
        let n = self.ln2.forward(p, &x)?;
        x.add(&self.ff.forward(p, &n)?)
    }
}

/// Stack of [`TransformerBlock`]s; depth 0 is the identity.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub blocks: Vec<TransformerBlock>,
}

impl TransformerStack {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize, depth: usize) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(init, &format!("{name}.{i}"), d, heads, 4))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
        let mut h = *x;
        for b in &self.blocks {
            h = b.forward(p, &h, mask)?;
        }
        Ok(h)
    }
}
