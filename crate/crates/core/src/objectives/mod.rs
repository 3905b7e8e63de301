//! Fine-grained clip/word similarity, pose/RGB clip matching and the
//! contrastive losses built on them.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod gradcheck;

pub use gradcheck::gradcheck_suite;

/// Feature normalization guard.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the pose-text and RGB-text terms.
    pub alpha: f64,
    /// Weight of the pose-RGB matching term.
    pub beta: f64,
    /// Initial value of the (exponentiated) temperature scale.
    pub init_scale: f64,
    /// Upper bound of the temperature scale.
    pub max_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.4,
            init_scale: 14.29,
            max_scale: 100.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config(format!("loss weights must be >= 0, got alpha {} beta {}", self.alpha, self.beta)));
        }
        if !(self.init_scale > 0.0 && self.init_scale <= self.max_scale && self.max_scale.is_finite()) {
            return Err(Error::Config(format!(
                "temperature scale {} must lie in (0, {}]",
                self.init_scale, self.max_scale
            )));
        }
        Ok(())
    }
}

/// Learnable temperature stored as a log-scale; the applied scale is
/// `exp(min(log_scale, ln max_scale))`.
#[derive(Clone, Debug)]
pub struct Temperature {
    pub log_scale: ParamId,
    pub max_log: f64,
}

impl Temperature {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cfg: &LossConfig) -> Self {
        Self {
            log_scale: init.constant(name, &[1], cfg.init_scale.ln()),
            max_log: cfg.max_scale.ln(),
        }
    }

    pub fn scale<'t, T: Scalar>(&self, p: &Bound<'t, T>) -> Var<'t, T> {
        p.var(self.log_scale).clamp(T::lit(-self.max_log - 50.0), T::lit(self.max_log)).exp()
    }

    /// Clamps the stored value in place after an optimizer step.
    pub fn clamp_value<T: Scalar>(&self, v: &mut Tensor<T>) {
        for x in v.data_mut() {
            *x = x.min(T::lit(self.max_log));
        }
    }
}

fn check_features(what: &'static str, x: &[usize], mask_len: usize) -> Result<(usize, usize, usize)> {
    if x.len() != 3 || mask_len != x[0] * x[1] {
        return Err(Error::shape(what, x, &[mask_len]));
    }
    Ok((x[0], x[1], x[2]))
}

fn counts(mask: &[bool], per: usize, what: &'static str) -> Result<Vec<usize>> {
    mask.chunks(per)
        .map(|row| match row.iter().filter(|&&m| m).count() {
            0 => Err(Error::invalid(what, "no valid entries")),
            n => Ok(n),
        })
        .collect()
}

/// All-pairs dot products of `[Ba, Ta, D]` and `[Bb, Tb, D]`, laid out as
/// `[Ba, Bb, Ta, Tb]`.
fn pair_products<'t, T: Scalar>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa[2] != sb[2] {
        return Err(Error::shape("similarity", &sa, &sb));
    }
    let d = sa[2];
    let a2 = a.reshape(&[sa[0] * sa[1], d])?;
    let b2 = b.reshape(&[sb[0] * sb[1], d])?;
    a2.matmul(&b2.transpose()?)?
        .reshape(&[sa[0], sa[1], sb[0], sb[1]])?
        .permute(&[0, 2, 1, 3])
}

/// Clip-word similarity for every (text, video) pair.
pub struct FineGrained<'t, T: Scalar> {
    /// `E`: `[Bt, Bv, T, L]`.
    pub e: Var<'t, T>,
    /// Softmax over clips (per word column).
    pub e_col: Var<'t, T>,
    /// Softmax over words (per clip row).
    pub e_row: Var<'t, T>,
    /// `Σ_clips E ⊙ E_col`: `[Bt, Bv, L]`.
    pub t2k_prime: Var<'t, T>,
    /// `Σ_words E ⊙ E_row`: `[Bt, Bv, T]`.
    pub k2t_prime: Var<'t, T>,
    /// Masked means, indexed `[text, video]`.
    pub m_t2k: Var<'t, T>,
    pub m_k2t: Var<'t, T>,
}

/// `video: [Bv, T, D]`, `video_mask: [Bv * T]`, `text: [Bt, L, D]`,
/// `text_mask: [Bt * L]`. Masked clips and words are excluded from every
/// softmax and mean.
pub fn fine_grained<'t, T: Scalar>(
    video: &Var<'t, T>,
    video_mask: &[bool],
    text: &Var<'t, T>,
    text_mask: &[bool],
) -> Result<FineGrained<'t, T>> {
    let (bv, t, _) = check_features("video features", &video.shape(), video_mask.len())?;
    let (bt, l, _) = check_features("text features", &text.shape(), text_mask.len())?;
    let clips = counts(video_mask, t, "fine_grained_similarity")?;
    let words = counts(text_mask, l, "fine_grained_similarity")?;
    let e = pair_products(text, video)?.permute(&[0, 1, 3, 2])?;
    let n = bt * bv * t * l;
    let (mut col_mask, mut row_mask) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..bt {
        for j in 0..bv {
            for ti in 0..t {
                for li in 0..l {
                    col_mask.push(video_mask[j * t + ti]);
                    row_mask.push(text_mask[i * l + li]);
                }
            }
        }
    }
    let e_col = e.masked_softmax(2, Some(&col_mask))?;
    let e_row = e.masked_softmax(3, Some(&row_mask))?;
    let t2k_prime = e.mul(&e_col)?.sum_axis(2)?;
    let k2t_prime = e.mul(&e_row)?.sum_axis(3)?;
    let tape = e.tape();
    let word_w: Vec<T> = (0..bt)
        .flat_map(|i| {
            let c = words[i];
            (0..bv).flat_map(move |_| (0..l).map(move |li| (i, li, c)))
        })
        .map(|(i, li, c)| if text_mask[i * l + li] { T::one() / T::from_usize_lossy(c) } else { T::zero() })
        .collect();
    let clip_w: Vec<T> = (0..bt)
        .flat_map(|_| (0..bv).flat_map(|j| (0..t).map(move |ti| j * t + ti)))
        .map(|k| if video_mask[k] { T::one() / T::from_usize_lossy(clips[k / t]) } else { T::zero() })
        .collect();
    let m_t2k = t2k_prime.mul(&tape.constant(Tensor::new([bt, bv, l], word_w)?))?.sum_axis(2)?;
    let m_k2t = k2t_prime.mul(&tape.constant(Tensor::new([bt, bv, t], clip_w)?))?.sum_axis(2)?;
    Ok(FineGrained {
        e,
        e_col,
        e_row,
        t2k_prime,
        k2t_prime,
        m_t2k,
        m_k2t,
    })
}

/// Pose-clip × RGB-clip matching for every (pose video, RGB video) pair.
pub struct PoseRgb<'t, T: Scalar> {
    /// `V`: `[Bp, Br, T, T]`, rows are pose clips.
    pub v: Var<'t, T>,
    pub v_col: Var<'t, T>,
    pub v_row: Var<'t, T>,
    pub v_p2r: Var<'t, T>,
    pub v_r2p: Var<'t, T>,
    /// Diagonal sums, indexed `[pose video, RGB video]`.
    pub s_p2r: Var<'t, T>,
    pub s_r2p: Var<'t, T>,
}

/// `pose`, `rgb`: `[B, T, D]` with a shared `[B * T]` clip mask.
///
/// `S_p2r = Σ_i V_p2r[i,i] · softmax_j(V_p2r[i,:])[i]` and
/// `S_r2p = Σ_i V_r2p[i,i] · softmax_j(V_r2p[:,i])[i]`, summed over clip
/// indices valid in both videos.
pub fn pose_rgb<'t, T: Scalar>(pose: &Var<'t, T>, rgb: &Var<'t, T>, mask: &[bool]) -> Result<PoseRgb<'t, T>> {
    let (b, t, _) = check_features("pose features", &pose.shape(), mask.len())?;
    if rgb.shape() != pose.shape() {
        return Err(Error::shape("pose_rgb_similarity", &pose.shape(), &rgb.shape()));
    }
    counts(mask, t, "pose_rgb_similarity")?;
    let v = pair_products(pose, rgb)?;
    let n = b * b * t * t;
    let (mut row_valid, mut col_valid, mut diag) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for m in 0..b {
        for r in 0..b {
            for i in 0..t {
                for j in 0..t {
                    let pi = mask[m * t + i];
                    let rj = mask[r * t + j];
                    col_valid.push(pi);
                    row_valid.push(rj);
                    diag.push(if i == j && pi && mask[r * t + i] { T::one() } else { T::zero() });
                }
            }
        }
    }
    let v_col = v.masked_softmax(2, Some(&col_valid))?;
    let v_row = v.masked_softmax(3, Some(&row_valid))?;
    let v_p2r = v.mul(&v_col)?;
    let v_r2p = v.mul(&v_row)?;
    let diag = v.tape().constant(Tensor::new([b, b, t, t], diag)?);
    let s_p2r = v_p2r
        .mul(&v_p2r.masked_softmax(3, Some(&row_valid))?)?
        .mul(&diag)?
        .sum_axis(3)?
        .sum_axis(2)?;
    let s_r2p = v_r2p
        .mul(&v_r2p.masked_softmax(2, Some(&col_valid))?)?
        .mul(&diag)?
        .sum_axis(3)?
        .sum_axis(2)?;
    Ok(PoseRgb {
        v,
        v_col,
        v_row,
        v_p2r,
        v_r2p,
        s_p2r,
        s_r2p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Softmax along each row; the positive is `M[i, i]` against `M[i, :]`.
    Row,
    /// Softmax along each column; the positive is `M[i, i]` against `M[:, i]`.
    Column,
}

/// `-(1/B) Σ_i log softmax(scale · M)[i, i]` along the given direction.
pub fn infonce<'t, T: Scalar>(m: &Var<'t, T>, scale: &Var<'t, T>, dir: Direction) -> Result<Var<'t, T>> {
    let s = m.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::invalid("infonce", format!("score matrix must be square, got {s:?}")));
    }
    let b = s[0];
    let logp = m.mul_scalar(scale)?.log_softmax(match dir {
        Direction::Row => 1,
        Direction::Column => 0,
    })?;
    let eye = m.tape().constant(Tensor::eye(b));
    Ok(logp.mul(&eye)?.sum_all()?.scale(-T::one() / T::from_usize_lossy(b)))
}

/// `½ (L_row(M_t2k) + L_col(M_k2t))`.
pub fn symmetric_infonce<'t, T: Scalar>(
    row: &Var<'t, T>,
    col: &Var<'t, T>,
    scale: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let a = infonce(row, scale, Direction::Row)?;
    let b = infonce(col, scale, Direction::Column)?;
    Ok(a.add(&b)?.scale(T::lit(0.5)))
}

/// Clip and word features of one batch, each `[B, ·, D]`.
pub struct Features<'t, 'm, T: Scalar> {
    pub pose: Var<'t, T>,
    pub rgb: Var<'t, T>,
    pub fused: Var<'t, T>,
    pub text: Var<'t, T>,
    pub clip_mask: &'m [bool],
    pub token_mask: &'m [bool],
}

pub struct LossParts<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub tva: Var<'t, T>,
    pub tv: Var<'t, T>,
    pub tp: Var<'t, T>,
    pub tr: Var<'t, T>,
    pub pr: Var<'t, T>,
    /// Fused-stream scores `[text, video]`, for training-set ranking.
    pub m_fused: Var<'t, T>,
}

pub fn normalize<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    x.l2_normalize(T::lit(NORM_EPS))
}

/// `L = L_tv + α(L_tp + L_tr) + β L_pr`.
pub fn joint_loss<'t, T: Scalar>(
    cfg: &LossConfig,
    normalize_features: bool,
    scale: &Var<'t, T>,
    f: &Features<'t, '_, T>,
) -> Result<LossParts<'t, T>> {
    let prep = |x: &Var<'t, T>| if normalize_features { normalize(x) } else { Ok(*x) };
    let (pose, rgb, fused, text) = (prep(&f.pose)?, prep(&f.rgb)?, prep(&f.fused)?, prep(&f.text)?);
    let pair = |video: &Var<'t, T>| -> Result<(Var<'t, T>, Var<'t, T>)> {
        let g = fine_grained(video, f.clip_mask, &text, f.token_mask)?;
        Ok((symmetric_infonce(&g.m_t2k, &g.m_k2t, scale)?, g.m_t2k))
    };
    let (tv, m_fused) = pair(&fused)?;
    let (tp, _) = pair(&pose)?;
    let (tr, _) = pair(&rgb)?;
    let tva = tv.add(&tp.add(&tr)?.scale(T::lit(cfg.alpha)))?;
    let s = pose_rgb(&pose, &rgb, f.clip_mask)?;
    let pr = symmetric_infonce(&s.s_p2r, &s.s_r2p, scale)?;
    let total = tva.add(&pr.scale(T::lit(cfg.beta)))?;
    Ok(LossParts {
        total,
        tva,
        tv,
        tp,
        tr,
        pr,
        m_fused,
    })
}

/// Single-pair fine-grained score.
#[derive(Clone, Debug, PartialEq)]
pub struct FineGrainedScore<T> {
    pub e: Tensor<T>,
    pub e_col: Tensor<T>,
    pub e_row: Tensor<T>,
    pub t2k_prime: Tensor<T>,
    pub k2t_prime: Tensor<T>,
    pub m_t2k: T,
    pub m_k2t: T,
}

/// `f_k: [T, D]` clip features, `f_w: [L, D]` word features.
pub fn fine_grained_similarity<T: Scalar>(
    f_k: &Tensor<T>,
    clip_mask: &[bool],
    f_w: &Tensor<T>,
    word_mask: &[bool],
) -> Result<FineGrainedScore<T>> {
    let tape = Tape::new();
    let lift = |x: &Tensor<T>| -> Result<Var<'_, T>> {
        let mut s = vec![1];
        s.extend_from_slice(x.shape());
        tape.constant(x.clone()).reshape(&s)
    };
    let g = fine_grained(&lift(f_k)?, clip_mask, &lift(f_w)?, word_mask)?;
    let (t, l) = (f_k.shape()[0], f_w.shape()[0]);
    Ok(FineGrainedScore {
        e: g.e.value().reshape([t, l])?,
        e_col: g.e_col.value().reshape([t, l])?,
        e_row: g.e_row.value().reshape([t, l])?,
        t2k_prime: g.t2k_prime.value().reshape([l])?,
        k2t_prime: g.k2t_prime.value().reshape([t])?,
        m_t2k: g.m_t2k.item(),
        m_k2t: g.m_k2t.item(),
    })
}

/// Single-pair pose/RGB score.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseRgbScore<T> {
    pub v: Tensor<T>,
    pub v_col: Tensor<T>,
    pub v_row: Tensor<T>,
    pub v_p2r: Tensor<T>,
    pub v_r2p: Tensor<T>,
    pub s_p2r: T,
    pub s_r2p: T,
}

/// `f_p`, `f_r`: `[T, D]` with a shared clip mask.
pub fn pose_rgb_similarity<T: Scalar>(f_p: &Tensor<T>, f_r: &Tensor<T>, mask: &[bool]) -> Result<PoseRgbScore<T>> {
    let tape = Tape::new();
    let lift = |x: &Tensor<T>| -> Result<Var<'_, T>> {
        let mut s = vec![1];
        s.extend_from_slice(x.shape());
        tape.constant(x.clone()).reshape(&s)
    };
    let s = pose_rgb(&lift(f_p)?, &lift(f_r)?, mask)?;
    let t = f_p.shape()[0];
    Ok(PoseRgbScore {
        v: s.v.value().reshape([t, t])?,
        v_col: s.v_col.value().reshape([t, t])?,
        v_row: s.v_row.value().reshape([t, t])?,
        v_p2r: s.v_p2r.value().reshape([t, t])?,
        v_r2p: s.v_r2p.value().reshape([t, t])?,
        s_p2r: s.s_p2r.item(),
        s_r2p: s.s_r2p.item(),
    })
}

#[cfg(test)]
mod tests;
