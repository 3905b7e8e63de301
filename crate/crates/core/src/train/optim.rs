use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Linear warmup to the group's base rate, then cosine decay to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub encoder: f64,
    pub transformer: f64,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    /// `warmup = round(frac · total)`, kept below `total`.
    pub fn new(encoder: f64, transformer: f64, total: usize, warmup_frac: f64) -> Self {
        let warmup = ((total as f64 * warmup_frac).round() as usize).min(total.saturating_sub(1));
        Self {
            encoder,
            transformer,
            warmup,
            total,
        }
    }

    pub fn base(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Transformer => self.transformer,
        }
    }

    pub fn lr_at(&self, group: ParamGroup, step: usize) -> Result<f64> {
        lr_at(self.base(group), self.warmup, self.total, step)
    }
}

pub fn lr_at(base: f64, warmup: usize, total: usize, step: usize) -> Result<f64> {
    if step > total {
        return Err(Error::invalid("lr_at", format!("step {step} beyond schedule of {total} steps")));
    }
    if step < warmup {
        return Ok(base * step as f64 / warmup as f64);
    }
    if step == total {
        return Ok(0.0);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. Every gradient is checked before any parameter
    /// changes, so a non-finite gradient leaves the store untouched.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: impl Fn(ParamGroup) -> f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::invalid("adam", format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        for (p, g) in store.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::shape("adam", p.value.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let eps = T::lit(self.eps);
        for ((p, g), (m, v)) in store.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let rate = T::lit(lr(p.group));
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w = *w - rate * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
