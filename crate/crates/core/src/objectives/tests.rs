use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::randn;

const E_OVER_E1: f64 = 0.731_058_578_630_004_9;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

#[test]
fn single_clip_single_word_gives_the_dot_product() {
    let s = fine_grained_similarity(&t(&[1, 3], &[0.5, -1.0, 2.0]), &[true], &t(&[1, 3], &[1.0, 0.25, 0.5]), &[true])
        .unwrap();
    assert_eq!(s.m_t2k, 1.25);
    assert_eq!(s.m_k2t, 1.25);
    let s = pose_rgb_similarity(&t(&[1, 2], &[0.5, 2.0]), &t(&[1, 2], &[3.0, -1.0]), &[true]).unwrap();
    assert_eq!(s.s_p2r, -0.5);
    assert_eq!(s.s_r2p, -0.5);
}

#[test]
fn identity_similarity_spot_values() {
    let eye = Tensor::<f64>::eye(2);
    let s = fine_grained_similarity(&eye, &[true; 2], &eye, &[true; 2]).unwrap();
    assert!((s.m_t2k - E_OVER_E1).abs() < 1e-12, "{}", s.m_t2k);
    assert!((s.m_k2t - E_OVER_E1).abs() < 1e-12, "{}", s.m_k2t);
    assert!((s.m_t2k - 0.73106).abs() < 1e-5);

    let s = pose_rgb_similarity(&eye, &eye, &[true; 2]).unwrap();
    let inner = E_OVER_E1.exp() / (E_OVER_E1.exp() + 1.0);
    assert!((s.s_p2r - 2.0 * E_OVER_E1 * inner).abs() < 1e-12);
    assert!((s.s_p2r - 0.98698).abs() < 1e-5, "{}", s.s_p2r);
    assert!((s.s_r2p - 0.98698).abs() < 1e-5, "{}", s.s_r2p);
}

#[test]
fn masked_clips_and_words_are_inert() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (tv, l, d) = (rng.gen_range(1..5), rng.gen_range(1..5), 4);
        let fk = randn(&mut rng, &[tv, d], 1.0);
        let fw = randn(&mut rng, &[l, d], 1.0);
        let base = fine_grained_similarity(&fk, &vec![true; tv], &fw, &vec![true; l]).unwrap();
        let pr = pose_rgb_similarity(&fk, &fk.map(|v| 0.5 * v), &vec![true; tv]).unwrap();

        let (pt, pl) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let pad = |x: &Tensor<f64>, extra: usize, rng: &mut ChaCha8Rng| {
            let mut data = x.data().to_vec();
            data.extend(randn(rng, &[extra, d], 30.0).into_data());
            t(&[x.shape()[0] + extra, d], &data)
        };
        let (fk2, fw2) = (pad(&fk, pt, &mut rng), pad(&fw, pl, &mut rng));
        let cm: Vec<bool> = (0..tv + pt).map(|i| i < tv).collect();
        let wm: Vec<bool> = (0..l + pl).map(|i| i < l).collect();
        let padded = fine_grained_similarity(&fk2, &cm, &fw2, &wm).unwrap();
        assert!((base.m_t2k - padded.m_t2k).abs() < 1e-9);
        assert!((base.m_k2t - padded.m_k2t).abs() < 1e-9);
        let pr2 = pose_rgb_similarity(&fk2, &fk2.map(|v| 0.5 * v), &cm).unwrap();
        assert!((pr.s_p2r - pr2.s_p2r).abs() < 1e-9);
        assert!((pr.s_r2p - pr2.s_r2p).abs() < 1e-9);
    }
}

#[test]
fn empty_masks_are_rejected() {
    let x = Tensor::<f64>::eye(2);
    assert!(fine_grained_similarity(&x, &[false; 2], &x, &[true; 2]).is_err());
    assert!(fine_grained_similarity(&x, &[true; 2], &x, &[false; 2]).is_err());
    assert!(pose_rgb_similarity(&x, &x, &[false; 2]).is_err());
    assert!(pose_rgb_similarity(&x, &Tensor::eye(3), &[true; 2]).is_err());
}

#[test]
fn symmetric_square_similarity_scores_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..5 {
        let x = randn(&mut rng, &[n, 3], 1.0);
        let s = fine_grained_similarity(&x, &vec![true; n], &x, &vec![true; n]).unwrap();
        assert!((s.m_t2k - s.m_k2t).abs() < 1e-12);
    }
}

fn infonce_of(m: &Tensor<f64>, scale: f64, dir: Direction) -> f64 {
    let tape = Tape::new();
    let s = tape.constant(t(&[1], &[scale]));
    infonce(&tape.constant(m.clone()), &s, dir).unwrap().item()
}

#[test]
fn infonce_spot_values() {
    for dir in [Direction::Row, Direction::Column] {
        assert_eq!(infonce_of(&t(&[1, 1], &[3.7]), 5.0, dir), 0.0);
        let uniform = infonce_of(&t(&[2, 2], &[0.3; 4]), 14.0, dir);
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-9);
        let sharp = infonce_of(&t(&[2, 2], &[10.0, -10.0, -10.0, 10.0]), 1.0, dir);
        assert!(sharp < 1e-8, "{sharp}");
        let five = infonce_of(&t(&[5, 5], &[-0.25; 25]), 3.0, dir);
        assert!((five - 5f64.ln()).abs() < 1e-9);
    }
    let tape = Tape::new();
    assert!(infonce(&tape.constant(Tensor::<f64>::zeros([2, 3])), &tape.constant(t(&[1], &[1.0])), Direction::Row).is_err());
}

#[test]
fn infonce_directions_use_rows_and_columns() {
    // Row 0 is ambiguous, column 0 is not.
    let m = t(&[2, 2], &[1.0, 1.0, -5.0, 1.0]);
    let row = infonce_of(&m, 1.0, Direction::Row);
    let col = infonce_of(&m, 1.0, Direction::Column);
    let want_row = 0.5 * (2f64.ln() + (1.0 + (-6f64).exp()).ln());
    let want_col = 0.5 * ((1.0 + (-6f64).exp()).ln() + 2f64.ln());
    assert!((row - want_row).abs() < 1e-12);
    assert!((col - want_col).abs() < 1e-12);
    let mt = t(&[2, 2], &[1.0, -5.0, 1.0, 1.0]);
    assert!((infonce_of(&mt, 1.0, Direction::Column) - row).abs() < 1e-12);
}

proptest::proptest! {
    #[test]
    fn infonce_is_nonnegative(
        b in 1usize..6,
        seed in 0u64..1000,
        scale in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = randn(&mut rng, &[b, b], 3.0);
        for dir in [Direction::Row, Direction::Column] {
            proptest::prop_assert!(infonce_of(&m, scale, dir) >= 0.0);
        }
    }
}

struct Batch3 {
    pose: Tensor<f64>,
    rgb: Tensor<f64>,
    fused: Tensor<f64>,
    text: Tensor<f64>,
    clip_mask: Vec<bool>,
    token_mask: Vec<bool>,
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize) -> Batch3 {
    let (tc, l, d) = (4, 3, 5);
    let clip_mask = (0..b).flat_map(|i| (0..tc).map(move |j| j < tc - i % 2)).collect();
    let token_mask = (0..b).flat_map(|i| (0..l).map(move |j| j < l - i % 3)).collect();
    Batch3 {
        pose: randn(rng, &[b, tc, d], 1.0),
        rgb: randn(rng, &[b, tc, d], 1.0),
        fused: randn(rng, &[b, tc, d], 1.0),
        text: randn(rng, &[b, l, d], 1.0),
        clip_mask,
        token_mask,
    }
}

struct LossValues {
    total: f64,
    tva: f64,
    tv: f64,
    tp: f64,
    tr: f64,
    pr: f64,
}

fn losses(cfg: &LossConfig, b: &Batch3, scale: f64) -> LossValues {
    let tape = Tape::new();
    let f = Features {
        pose: tape.constant(b.pose.clone()),
        rgb: tape.constant(b.rgb.clone()),
        fused: tape.constant(b.fused.clone()),
        text: tape.constant(b.text.clone()),
        clip_mask: &b.clip_mask,
        token_mask: &b.token_mask,
    };
    let s = tape.constant(t(&[1], &[scale]));
    let l = joint_loss(cfg, true, &s, &f).unwrap();
    LossValues {
        total: l.total.item(),
        tva: l.tva.item(),
        tv: l.tv.item(),
        tp: l.tp.item(),
        tr: l.tr.item(),
        pr: l.pr.item(),
    }
}

#[test]
fn loss_weights_combine_linearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = random_batch(&mut rng, 4);
    let d = LossConfig::default();
    let full = losses(&d, &b, 10.0);
    assert!((full.tva - (full.tv + 0.8 * (full.tp + full.tr))).abs() < 1e-12);
    assert!((full.total - (full.tva + 0.4 * full.pr)).abs() < 1e-12);

    let no_aux = losses(&LossConfig { alpha: 0.0, ..d.clone() }, &b, 10.0);
    assert_eq!(no_aux.tva, no_aux.tv);
    let no_pr = losses(&LossConfig { beta: 0.0, ..d.clone() }, &b, 10.0);
    assert_eq!(no_pr.total, no_pr.tva);

    let same = Batch3 {
        pose: b.fused.clone(),
        rgb: b.fused.clone(),
        ..b
    };
    let l = losses(&d, &same, 10.0);
    assert!((l.tva - (1.0 + 2.0 * 0.8) * l.tv).abs() < 1e-12);
}

/// Per-video slices and per-text slices of a batch, reordered by `order`.
fn reorder(b: &Batch3, order: &[usize]) -> Batch3 {
    let take = |x: &Tensor<f64>| {
        let per: usize = x.shape()[1..].iter().product();
        let data: Vec<f64> = order.iter().flat_map(|&i| x.data()[i * per..(i + 1) * per].to_vec()).collect();
        let mut s = x.shape().to_vec();
        s[0] = order.len();
        t(&s, &data)
    };
    let mask = |m: &[bool], per: usize| order.iter().flat_map(|&i| m[i * per..(i + 1) * per].to_vec()).collect();
    Batch3 {
        pose: take(&b.pose),
        rgb: take(&b.rgb),
        fused: take(&b.fused),
        text: take(&b.text),
        clip_mask: mask(&b.clip_mask, b.pose.shape()[1]),
        token_mask: mask(&b.token_mask, b.text.shape()[1]),
    }
}

fn score_matrices(b: &Batch3) -> [Tensor<f64>; 4] {
    let tape = Tape::new();
    let c = |x: &Tensor<f64>| normalize(&tape.constant(x.clone())).unwrap();
    let g = fine_grained(&c(&b.fused), &b.clip_mask, &c(&b.text), &b.token_mask).unwrap();
    let s = pose_rgb(&c(&b.pose), &c(&b.rgb), &b.clip_mask).unwrap();
    [g.m_t2k.value(), g.m_k2t.value(), s.s_p2r.value(), s.s_r2p.value()]
}

#[test]
fn batch_scores_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = random_batch(&mut rng, 4);
    let order = [2, 0, 3, 1];
    let base = score_matrices(&b);
    let permuted = score_matrices(&reorder(&b, &order));
    for (x, y) in base.iter().zip(&permuted) {
        for i in 0..4 {
            for j in 0..4 {
                let a = x.data()[order[i] * 4 + order[j]];
                assert!((a - y.data()[i * 4 + j]).abs() < 1e-12);
            }
        }
    }
    let l0 = losses(&LossConfig::default(), &b, 8.0);
    let l1 = losses(&LossConfig::default(), &reorder(&b, &order), 8.0);
    assert!((l0.total - l1.total).abs() < 1e-12);
}

#[test]
fn duplicated_pair_gives_identical_rows_and_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = random_batch(&mut rng, 3);
    let dup = reorder(&b, &[0, 1, 2, 1]);
    for m in score_matrices(&dup) {
        let at = |i: usize, j: usize| m.data()[i * 4 + j];
        for k in 0..4 {
            assert_eq!(at(1, k), at(3, k));
            assert_eq!(at(k, 1), at(k, 3));
        }
    }
}

#[test]
fn one_pair_batch_has_zero_contrastive_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = random_batch(&mut rng, 1);
    let l = losses(&LossConfig::default(), &b, 14.29);
    assert_eq!(l.total, 0.0);
}

#[test]
fn matched_pose_and_rgb_dominate_their_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let (b, tc, d) = (5, 4, 32);
        let x = randn(&mut rng, &[b, tc, d], 1.0);
        let mask: Vec<bool> = (0..b * tc).map(|k| k % tc < tc - (trial + k / tc) % 2).collect();
        let tape = Tape::new();
        let f = normalize(&tape.constant(x)).unwrap();
        let s = pose_rgb(&f, &f, &mask).unwrap().s_p2r.value();
        for m in 0..b {
            let row = &s.data()[m * b..(m + 1) * b];
            let best = (0..b).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            assert_eq!(best, m, "trial {trial} row {m}: {row:?}");
        }
    }
}

#[test]
fn temperature_is_clamped() {
    let mut store = crate::nn::ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = LossConfig::default();
    let temp = Temperature::new(
        &mut Init {
            store: &mut store,
            rng: &mut rng,
            group: crate::nn::ParamGroup::Encoder,
        },
        "logit_scale",
        &cfg,
    );
    let scale = |store: &crate::nn::ParamStore<f64>| {
        let tape = Tape::new();
        temp.scale(&store.bind(&tape)).item()
    };
    assert!((scale(&store) - 14.29).abs() < 1e-9);
    store.get_mut(temp.log_scale).value.data_mut()[0] = 10.0;
    assert!((scale(&store) - 100.0).abs() < 1e-9);
    temp.clamp_value(&mut store.get_mut(temp.log_scale).value);
    assert!((store.get(temp.log_scale).value.data()[0] - 100f64.ln()).abs() < 1e-12);

    assert!(LossConfig { alpha: -0.1, ..cfg.clone() }.validate().is_err());
    assert!(LossConfig { init_scale: 120.0, ..cfg }.validate().is_err());
}

#[test]
fn gradcheck_one_seed() {
    for c in gradcheck_suite(0).unwrap() {
        assert!(c.passed(), "{} err {} over {} entries", c.name, c.max_rel_err, c.entries);
    }
}
