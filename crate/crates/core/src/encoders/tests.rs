use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{random_pose, tiny_config};
use super::*;
use crate::autograd::Tape;
use crate::data::topology::Group;
use crate::data::plan_clips;
use crate::nn::ParamStore;

fn build(cfg: &ModelConfig, seed: u64) -> (ParamStore<f64>, Encoders) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoders::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
            group: ParamGroup::Encoder,
        },
        cfg,
    )
    .unwrap();
    (store, enc)
}

fn path_layer(store: &mut ParamStore<f64>, activation: Activation) -> GcnLayer {
    let weight = store.add("w", Tensor::from_f64([1, 1], &[1.0]).unwrap(), ParamGroup::Encoder);
    GcnLayer {
        weight,
        adj: GroupGraph::new(2, &[(0, 1)]).normalized_adjacency(),
        activation,
    }
}

fn gcn_out(layer: &GcnLayer, store: &ParamStore<f64>, f: &[f64]) -> Vec<f64> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let x = tape.constant(Tensor::from_f64([2, 1], f).unwrap());
    layer.forward(&p, &x).unwrap().value().into_data()
}

#[test]
fn gcn_on_two_node_path() {
    let mut store = ParamStore::new();
    let lin = path_layer(&mut store, Activation::Identity);
    assert_eq!(lin.adj.data(), &[0.5, 0.5, 0.5, 0.5]);
    let out = gcn_out(&lin, &store, &[2.0, 0.0]);
    assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-15), "{out:?}");
    let out = gcn_out(&lin, &store, &[-3.25, -3.25]);
    assert!(out.iter().all(|v| (v + 3.25).abs() < 1e-15), "{out:?}");

    let relu = GcnLayer {
        activation: Activation::Relu,
        ..lin
    };
    assert_eq!(gcn_out(&relu, &store, &[0.0, 0.0]), vec![0.0, 0.0]);
}

#[test]
fn gcn_rejects_wrong_keypoint_count() {
    let mut store = ParamStore::new();
    let layer = path_layer(&mut store, Activation::Relu);
    let tape = Tape::new();
    let p = store.bind(&tape);
    let x = tape.constant(Tensor::<f64>::zeros([3, 1]));
    assert!(matches!(layer.forward(&p, &x), Err(Error::Shape { .. })));
}

/// Cyclic Jacobi eigenvalue sweep for small symmetric matrices.
fn symmetric_eigenvalues(a: &Tensor<f64>) -> Vec<f64> {
    let n = a.shape()[0];
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.data()[i * n..(i + 1) * n].to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

#[test]
fn normalized_adjacency_is_symmetric_with_unit_spectral_bound() {
    for g in Group::ALL {
        let a: Tensor<f64> = g.graph().normalized_adjacency();
        let n = a.shape()[0];
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a.data()[i * n + j], a.data()[j * n + i]);
            }
        }
        let eig = symmetric_eigenvalues(&a);
        let trace: f64 = (0..n).map(|i| a.data()[i * n + i]).sum();
        assert!((eig.iter().sum::<f64>() - trace).abs() < 1e-9);
        assert!(eig.iter().all(|l| l.abs() <= 1.0 + 1e-9), "{g:?}: {eig:?}");
        // (A + I) has the all-ones-weighted eigenvector with eigenvalue 1.
        assert!(eig.iter().any(|l| (l - 1.0).abs() < 1e-9));
    }
}

fn pose_out(enc: &Encoders, store: &ParamStore<f64>, pose: &PoseSequence) -> Vec<f64> {
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let plan = plan_clips(pose.frames, 4).unwrap();
    encode_pose(&enc.pose, &p, pose, &plan).unwrap().value().into_data()
}

#[test]
fn encode_pose_shape_and_determinism() {
    let cfg = tiny_config(9);
    let (store, enc) = build(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pose = random_pose(&mut rng, 20);
    let a = pose_out(&enc, &store, &pose);
    assert_eq!(a.len(), 4 * cfg.d_model);
    assert_eq!(a, pose_out(&enc, &store, &pose.clone()));
}

#[test]
fn anchor_normalization_removes_signer_offset() {
    let cfg = tiny_config(9);
    let (store, enc) = build(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pose = random_pose(&mut rng, 24);
    let mut shifted = pose.clone();
    for kp in shifted.keypoints.chunks_mut(3) {
        kp[0] += 0.125;
        kp[1] -= 0.0625;
    }
    let a = pose_out(&enc, &store, &pose);
    let b = pose_out(&enc, &store, &shifted);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "max diff {diff}");

    let mut raw = enc.clone();
    raw.pose.anchor_norm = false;
    let a = pose_out(&raw, &store, &pose);
    let b = pose_out(&raw, &store, &shifted);
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn anchor_normalization_removes_signer_size() {
    let cfg = tiny_config(9);
    let (store, enc) = build(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pose = random_pose(&mut rng, 20);
    let mut bigger = pose.clone();
    for kp in bigger.keypoints.chunks_mut(3) {
        kp[0] *= 2.0;
        kp[1] *= 2.0;
    }
    assert!((bigger.body_scale() - 2.0 * pose.body_scale()).abs() < 1e-9);
    let a = pose_out(&enc, &store, &pose);
    let b = pose_out(&enc, &store, &bigger);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "max diff {diff}");
}

#[test]
fn hands_share_one_gcn() {
    let cfg = tiny_config(9);
    let (mut store, enc) = build(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pose = random_pose(&mut rng, 16);
    let plan = plan_clips(16, 1).unwrap();
    let input = PoseInput::<f64>::new(&[pose], &[plan], true).unwrap();
    let dg = cfg.d_group;
    let right = |store: &ParamStore<f64>| -> Vec<f64> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let f = enc.pose.frame_features(&p, &input).unwrap();
        f.narrow(1, dg, dg).unwrap().value().into_data()
    };
    let before = right(&store);
    let grads = {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let f = enc.pose.frame_features(&p, &input).unwrap();
        let left = f.narrow(1, 0, dg).unwrap().sum_all().unwrap();
        let g = tape.backward(left).unwrap();
        p.vars().iter().map(|&v| g.get_or_zeros(v)).collect::<Vec<_>>()
    };
    let mut touched = Vec::new();
    for (param, g) in store.iter_mut().zip(&grads) {
        if g.data().iter().any(|&v| v != 0.0) {
            touched.push(param.name.clone());
            for (w, d) in param.value.data_mut().iter_mut().zip(g.data()) {
                *w -= 0.1 * d;
            }
        }
    }
    assert!(touched.iter().all(|n| n.starts_with("pose.hand_gcn.")), "{touched:?}");
    assert!(!touched.is_empty());
    let after = right(&store);
    assert!(before.iter().zip(&after).any(|(a, b)| a != b));
}

#[test]
fn interaction_depth_zero_adds_positions_only() {
    let cfg = ModelConfig {
        tr_depth: 0,
        ..tiny_config(9)
    };
    let (store, enc) = build(&cfg, 7);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let x = Tensor::from_f64([2, 4, 16], &(0..128).map(|i| i as f64 * 0.01).collect::<Vec<_>>()).unwrap();
    let out = enc.pose_tr.forward(&p, &tape.constant(x.clone()), &[true; 8]).unwrap().value();
    let pos = store.get(enc.pose_tr.pos).value.data().to_vec();
    for (i, (o, xv)) in out.data().iter().zip(x.data()).enumerate() {
        assert_eq!(*o, xv + pos[i % 64]);
    }
}

#[test]
fn padded_clip_positions_do_not_reach_valid_outputs() {
    let cfg = tiny_config(9);
    let (store, enc) = build(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = crate::gradcheck::randn(&mut rng, &[1, 4, 16], 1.0);
    let mut swapped = x.clone();
    let mut junk = x.clone();
    for j in 0..16 {
        swapped.data_mut().swap(2 * 16 + j, 3 * 16 + j);
        junk.data_mut()[2 * 16 + j] = 50.0;
        junk.data_mut()[3 * 16 + j] = -7.0;
    }
    let mask = [true, true, false, false];
    let run = |t: &Tensor<f64>| {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let out = enc.rgb_tr.forward(&p, &tape.constant(t.clone()), &mask).unwrap().value();
        out.data()[..32].to_vec()
    };
    let base = run(&x);
    // Positions differ between slots 2 and 3, so swapping is not a no-op on
    // those rows, but rows 0 and 1 never see them.
    assert_eq!(base, run(&swapped));
    assert_eq!(base, run(&junk));
}

#[test]
fn text_encoder_shapes_and_vocab_check() {
    let cfg = tiny_config(9);
    let (store, enc) = build(&cfg, 10);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let one = enc.text.forward(&p, &[4], &[true], 1).unwrap();
    assert_eq!(one.shape(), vec![1, 1, 16]);
    let two = enc.text.forward(&p, &[2, 3, 0, 5, 6, 7], &[true, true, false, true, true, true], 2).unwrap();
    assert_eq!(two.shape(), vec![2, 3, 16]);
    assert!(enc.text.forward(&p, &[9], &[true], 1).is_err());
    assert!(enc.text.forward(&p, &[2, 3], &[true], 1).is_err());
}

#[test]
fn parameter_groups() {
    let (store, _) = build(&tiny_config(9), 11);
    for p in store.iter() {
        let expected = if p.name.starts_with("pose.") || p.name.starts_with("rgb.") {
            ParamGroup::Encoder
        } else {
            ParamGroup::Transformer
        };
        assert_eq!(p.group, expected, "{}", p.name);
    }
}

#[test]
fn gradcheck_one_seed() {
    let checks = gradcheck_suite(0).unwrap();
    assert_eq!(checks.len(), 4);
    for c in &checks {
        assert!(c.passed(), "{} err {} over {} entries", c.name, c.max_rel_err, c.entries);
        assert!(c.entries >= 100, "{} has {} entries", c.name, c.entries);
    }
}
