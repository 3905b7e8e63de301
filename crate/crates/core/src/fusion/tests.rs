use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{perturbed, tiny_config};
use super::*;
use crate::autograd::Tape;
use crate::gradcheck::randn;
use crate::nn::ParamStore;

fn zero_param(store: &mut ParamStore<f64>, name: &str) {
    let p = store.by_name_mut(name).unwrap_or_else(|| panic!("no parameter {name}"));
    p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
}

fn first_layer(f: &Fusion) -> &GlossAttentionLayer {
    match f {
        Fusion::Cgaf(c) => &c.pose_layers[0],
        _ => unreachable!(),
    }
}

fn cfg(n: usize, heads: usize, clips: usize) -> ModelConfig {
    let mut c = tiny_config(FusionVariant::Cgaf, heads);
    c.clips = clips;
    c.fusion.n_neighbors = n;
    c
}

#[test]
fn single_neighbour_without_offsets_passes_values_through() {
    let c = cfg(1, 1, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut store, fusion) = perturbed(&c, &mut rng).unwrap();
    zero_param(&mut store, "fusion.pose.0.offset.weight");
    let layer = first_layer(&fusion);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let fq = tape.constant(randn(&mut rng, &[2, 5, 16], 1.0));
    let fkv = tape.constant(randn(&mut rng, &[2, 5, 16], 1.0));
    let r = layer.forward_detailed(&p, &fq, &fkv, &[5, 5]).unwrap();
    assert_eq!(r.raw.value(), r.v.value());
    assert!(r.weights.value().data().iter().all(|&w| w == 1.0));
}

/// Softmax attention of query `t` over keys at the given integer indices.
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

/// Rows of head `hi` of a `[B, T, D]` tensor for sample `b`: `[T, dh]`.
fn head_rows(x: &Tensor<f64>, b: usize, hi: usize, heads: usize) -> Vec<f64> {
    let (t, d) = (x.shape()[1], x.shape()[2]);
    let dh = d / heads;
    let mut out = Vec::with_capacity(t * dh);
    for ti in 0..t {
        let row = &x.data()[(b * t + ti) * d..][..d];
        out.extend_from_slice(&row[hi * dh..(hi + 1) * dh]);
    }
    out
}

#[test]
fn zero_offsets_match_dense_local_attention() {
    for (heads, n, scaled) in [(1, 3, true), (2, 4, true), (2, 5, false)] {
        let mut c = cfg(n, heads, 6);
        c.fusion.scaled_dot = scaled;
        let mut rng = ChaCha8Rng::seed_from_u64(heads as u64 * 10 + n as u64);
        let (mut store, fusion) = perturbed(&c, &mut rng).unwrap();
        zero_param(&mut store, "fusion.pose.0.offset.weight");
        let layer = first_layer(&fusion);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let fq = tape.constant(randn(&mut rng, &[2, 6, 16], 1.0));
        let fkv = tape.constant(randn(&mut rng, &[2, 6, 16], 1.0));
        let valid = [6, 4];
        let r = layer.forward_detailed(&p, &fq, &fkv, &valid).unwrap();
        let (q, k, v, raw) = (r.q.value(), r.k.value(), r.v.value(), r.raw.value());
        let dh = 16 / heads;
        let scale = if scaled { 1.0 / (dh as f64).sqrt() } else { 1.0 };
        let mut worst = 0.0f64;
        for b in 0..2 {
            for hi in 0..heads {
                let (qh, kh, vh, rh) = (
                    head_rows(&q, b, hi, heads),
                    head_rows(&k, b, hi, heads),
                    head_rows(&v, b, hi, heads),
                    head_rows(&raw, b, hi, heads),
                );
                for t in 0..6 {
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
        assert!(worst < 1e-9, "heads {heads} n {n}: {worst}");
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let c = cfg(4, 1, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut store, fusion) = perturbed(&c, &mut rng).unwrap();
    zero_param(&mut store, "fusion.pose.0.k.weight");
    let layer = first_layer(&fusion);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let fq = tape.constant(randn(&mut rng, &[1, 6, 16], 1.0));
    let fkv = tape.constant(randn(&mut rng, &[1, 6, 16], 1.0));
    let r = layer.forward_detailed(&p, &fq, &fkv, &[6]).unwrap();
    let pos = r.positions.value();
    assert!(pos.data().iter().any(|x| x.fract() != 0.0), "offsets should be fractional");
    let v = r.v.value();
    let raw = r.raw.value();
    for t in 0..6 {
        for c in 0..16 {
            let mut mean = 0.0;
            for i in 0..4 {
                let pv = pos.data()[t * 4 + i];
                let (f, w) = (pv.floor(), pv - pv.floor());
                let i0 = f as usize;
                let i1 = (i0 + 1) % 6;
                mean += ((1.0 - w) * v.data()[i0 * 16 + c] + w * v.data()[i1 * 16 + c]) / 4.0;
            }
            assert!((raw.data()[t * 16 + c] - mean).abs() < 1e-9);
        }
    }
}

#[test]
fn positions_wrap_and_stay_local_under_random_offsets() {
    let c = cfg(3, 2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut store, fusion) = perturbed(&c, &mut rng).unwrap();
    let layer = first_layer(&fusion).clone();
    let radius = c.fusion.clip_radius();
    let n = 3i64;
    for draw in 0..1000 {
        let w = store.by_name_mut("fusion.pose.0.offset.weight").unwrap();
        for x in w.value.data_mut() {
            *x = rng.gen_range(-6.0..6.0);
        }
        let valid = [6, 1 + draw % 6];
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let fq = tape.constant(randn(&mut rng, &[2, 6, 16], 1.0));
        let r = layer.forward_detailed(&p, &fq, &fq, &valid).unwrap();
        let pos = r.positions.value();
        let weights = r.weights.value();
        for row in weights.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for b in 0..2 {
            let period = valid[b] as f64;
            for h in 0..2 {
                for t in 0..6 {
                    for i in 0..3 {
                        let v = pos.data()[((b * 2 + h) * 6 + t) * 3 + i];
                        assert!((0.0..period).contains(&v), "position {v} outside [0, {period})");
                        let lo = t as f64 - (n / 2) as f64 - radius;
                        let hi = t as f64 + (n - n / 2 - 1) as f64 + radius;
                        let local = (-8..=8).any(|m| {
                            let u = v + m as f64 * period;
                            u >= lo - 1e-9 && u <= hi + 1e-9
                        });
                        assert!(local, "position {v} not within window of {t}");
                    }
                }
            }
        }
    }
}

fn cgaf(f: &Fusion) -> &Cgaf {
    match f {
        Fusion::Cgaf(c) => c,
        _ => unreachable!(),
    }
}

#[test]
fn zeroed_head_leaves_residual_sum() {
    let c = tiny_config(FusionVariant::Cgaf, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut store, fusion) = perturbed(&c, &mut rng).unwrap();
    zero_param(&mut store, "fusion.head.1.weight");
    zero_param(&mut store, "fusion.head.1.bias");
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let fp = tape.constant(randn(&mut rng, &[2, 5, 16], 1.0));
    let fr = tape.constant(randn(&mut rng, &[2, 5, 16], 1.0));
    let o = cgaf(&fusion).forward_detailed(&p, &fp, &fr, &[5, 3]).unwrap();
    let sum = o.pose_hat.add(&o.rgb_hat).unwrap();
    assert_eq!(o.fused.value(), sum.value());
}

#[test]
fn tied_streams_stay_tied() {
    let c = tiny_config(FusionVariant::Cgaf, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut store, fusion) = perturbed(&c, &mut rng).unwrap();
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).filter(|n| n.starts_with("fusion.pose.")).collect();
    for n in names {
        let v = store.by_name(&n).unwrap().value.clone();
        store.by_name_mut(&n.replacen("fusion.pose.", "fusion.rgb.", 1)).unwrap().value = v;
    }
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let f = tape.constant(randn(&mut rng, &[2, 5, 16], 1.0));
    let o = cgaf(&fusion).forward_detailed(&p, &f, &f, &[5, 4]).unwrap();
    assert_eq!(o.pose_hat.value(), o.rgb_hat.value());
}

#[test]
fn gradient_reaches_both_streams() {
    for variant in FusionVariant::ALL {
        let c = tiny_config(variant, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (store, fusion) = perturbed(&c, &mut rng).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let fp = tape.param(randn(&mut rng, &[2, 5, 16], 1.0));
        let fr = tape.param(randn(&mut rng, &[2, 5, 16], 1.0));
        let mask = [true; 10];
        let out = fusion.forward(&p, &fp, &fr, &mask).unwrap();
        assert_eq!(out.shape(), vec![2, 5, 16], "{variant:?}");
        let g = tape.backward(crate::gradcheck::probe(out, 1).unwrap()).unwrap();
        for x in [fp, fr] {
            assert!(g.get(x).unwrap().data().iter().any(|&v| v != 0.0), "{variant:?}");
        }
    }
}

#[test]
fn add_mlp_with_identity_mlp_is_sum() {
    let tape = Tape::new();
    let store = ParamStore::<f64>::new();
    let p = store.bind_frozen(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fp = tape.constant(randn(&mut rng, &[1, 3, 4], 1.0));
    let fr = tape.constant(randn(&mut rng, &[1, 3, 4], 1.0));
    let f = Fusion::AddMlp(Mlp { layers: Vec::new() });
    let out = f.forward(&p, &fp, &fr, &[true; 3]).unwrap();
    assert_eq!(out.value(), fp.add(&fr).unwrap().value());
}

#[test]
fn configuration_and_mask_errors() {
    let c = cfg(6, 1, 5);
    assert!(matches!(c.fusion.validate(16, 5), Err(Error::Config(_))));
    assert!(valid_lengths(&[false, false, true, true], 2).is_err());
    assert!(valid_lengths(&[true, false, true, true, true, true], 2).is_err());
    assert_eq!(valid_lengths(&[true, false, false, true, true, false], 2).unwrap(), vec![1, 2]);
    assert_eq!("cross_atten".parse::<FusionVariant>().unwrap(), FusionVariant::CrossAtten);
    assert!("nope".parse::<FusionVariant>().is_err());

    let c = tiny_config(FusionVariant::Cgaf, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (store, fusion) = perturbed(&c, &mut rng).unwrap();
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let f = tape.constant(randn(&mut rng, &[1, 5, 16], 1.0));
    assert!(fusion.forward(&p, &f, &f, &[false; 5]).is_err());
}

#[test]
fn gradcheck_one_seed() {
    for c in gradcheck_suite(0).unwrap() {
        assert!(c.passed(), "{} err {} over {} entries", c.name, c.max_rel_err, c.entries);
        assert!(c.entries >= 100, "{} has {} entries", c.name, c.entries);
    }
}
