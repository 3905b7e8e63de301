//! Degenerate configurations of gloss attention checked against direct
//! computations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seds_core::config::ModelConfig;
use seds_core::fusion::{Fusion, FusionConfig, FusionVariant, GlossAttentionLayer};
use seds_core::gradcheck::randn;
use seds_core::nn::{Init, ParamGroup, ParamStore};
use seds_core::{Tape, Tensor};

const D: usize = 16;

fn build(n: usize, heads: usize, clips: usize, scaled_dot: bool, seed: u64) -> (ParamStore<f64>, GlossAttentionLayer, ChaCha8Rng) {
    let cfg = ModelConfig {
        d_model: D,
        clips,
        text_vocab: 8,
        fusion: FusionConfig {
            variant: FusionVariant::Cgaf,
            n_neighbors: n,
            heads,
            scaled_dot,
            ..FusionConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let fusion = Fusion::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
            group: ParamGroup::Encoder,
        },
        &cfg,
    )
    .unwrap();
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let layer = match fusion {
        Fusion::Cgaf(c) => c.pose_layers[0].clone(),
        _ => unreachable!(),
    };
    (store, layer, rng)
}

fn zero(store: &mut ParamStore<f64>, name: &str) {
    store.by_name_mut(name).unwrap().value.data_mut().iter_mut().for_each(|v| *v = 0.0);
}

/// Softmax attention of one query over keys at integer indices.
fn dense_local(q: &[f64], k: &[f64], v: &[f64], idx: &[usize], scale: f64) -> Vec<f64> {
    let dh = q.len();
    let scores: Vec<f64> = idx
        .iter()
        .map(|&j| scale * (0..dh).map(|c| q[c] * k[j * dh + c]).sum::<f64>())
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    (0..dh)
        .map(|c| idx.iter().zip(&e).map(|(&j, w)| w / z * v[j * dh + c]).sum())
        .collect()
}

/// Rows of head `hi` of sample `b` in a `[B, T, D]` tensor: `[T, dh]`.
fn head_rows(x: &Tensor<f64>, b: usize, hi: usize, heads: usize) -> Vec<f64> {
    let t = x.shape()[1];
    let dh = D / heads;
    (0..t)
        .flat_map(|ti| x.data()[(b * t + ti) * D + hi * dh..][..dh].to_vec())
        .collect()
}

/// Largest gap between the attention result with zero offsets and dense
/// attention over the integer neighbourhood `t - N/2 + i (mod valid)`.
pub fn zero_offset_worst() -> f64 {
    let mut worst = 0.0f64;
    for (heads, n, scaled) in [(1, 3, true), (2, 4, true), (2, 5, false), (4, 6, true)] {
        let (mut store, layer, mut rng) = build(n, heads, 6, scaled, 10 * heads as u64 + n as u64);
        zero(&mut store, "fusion.pose.0.offset.weight");
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let fq = tape.constant(randn(&mut rng, &[2, 6, D], 1.0));
        let fkv = tape.constant(randn(&mut rng, &[2, 6, D], 1.0));
        let valid = [6, 4];
        let r = layer.forward_detailed(&p, &fq, &fkv, &valid).unwrap();
        let (q, k, v, raw) = (r.q.value(), r.k.value(), r.v.value(), r.raw.value());
        let dh = D / heads;
        let scale = if scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
        for b in 0..2 {
            for hi in 0..heads {
                let (qh, kh, vh, rh) = (
                    head_rows(&q, b, hi, heads),
                    head_rows(&k, b, hi, heads),
                    head_rows(&v, b, hi, heads),
                    head_rows(&raw, b, hi, heads),
                );
                for t in 0..valid[b] {
                    let idx: Vec<usize> = (0..n)
                        .map(|i| (t as i64 - (n / 2) as i64 + i as i64).rem_euclid(valid[b] as i64) as usize)
                        .collect();
                    let want = dense_local(&qh[t * dh..(t + 1) * dh], &kh, &vh, &idx, scale);
                    for (a, w) in rh[t * dh..(t + 1) * dh].iter().zip(&want) {
                        worst = worst.max((a - w).abs());
                    }
                }
            }
        }
    }
    worst
}

/// With one sampling point and no offsets the attention result equals the
/// values exactly.
pub fn single_neighbour_passes_values() -> bool {
    let (mut store, layer, mut rng) = build(1, 1, 5, true, 1);
    zero(&mut store, "fusion.pose.0.offset.weight");
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let fq = tape.constant(randn(&mut rng, &[2, 5, D], 1.0));
    let fkv = tape.constant(randn(&mut rng, &[2, 5, D], 1.0));
    let r = layer.forward_detailed(&p, &fq, &fkv, &[5, 5]).unwrap();
    r.raw.value() == r.v.value() && r.weights.value().data().iter().all(|&w| w == 1.0)
}

/// Draws random offset weights `draws` times and checks that every sampling
/// position lies in `[0, valid)` and is congruent to a point of the query's
/// clipped window. Returns the first violation.
pub fn wrap_violation(draws: usize) -> Option<String> {
    let (n, heads, t) = (3usize, 2usize, 6usize);
    let (mut store, layer, mut rng) = build(n, heads, t, true, 4);
    let radius = layer.clip;
    for draw in 0..draws {
        for x in store.by_name_mut("fusion.pose.0.offset.weight").unwrap().value.data_mut() {
            *x = rng.gen_range(-6.0..6.0);
        }
        let valid = [t, 1 + draw % t];
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let fq = tape.constant(randn(&mut rng, &[2, t, D], 1.0));
        let r = layer.forward_detailed(&p, &fq, &fq, &valid).unwrap();
        let pos = r.positions.value();
        for (row, w) in r.weights.value().data().chunks(n).enumerate() {
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Some(format!("draw {draw}: weights of row {row} do not sum to 1"));
            }
        }
        for b in 0..2 {
            let period = valid[b] as f64;
            for h in 0..heads {
                for ti in 0..t {
                    for i in 0..n {
                        let v = pos.data()[((b * heads + h) * t + ti) * n + i];
                        if !(0.0..period).contains(&v) {
                            return Some(format!("draw {draw}: position {v} outside [0, {period})"));
                        }
                        let lo = ti as f64 - (n / 2) as f64 - radius;
                        let hi = ti as f64 + (n - n / 2 - 1) as f64 + radius;
                        let local = (-8..=8).any(|m| {
                            let u = v + m as f64 * period;
                            u >= lo - 1e-9 && u <= hi + 1e-9
                        });
                        if !local {
                            return Some(format!("draw {draw}: position {v} not in the window of clip {ti}"));
                        }
                    }
                }
            }
        }
    }
    None
}
