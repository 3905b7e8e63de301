//! Dense re-implementations of the clip/word and pose/RGB scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seds_core::objectives::{fine_grained_similarity, pose_rgb_similarity};
use seds_core::Tensor;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of `xs` restricted to `keep`; dropped entries get weight 0.
pub fn softmax_where(xs: &[f64], keep: &[bool]) -> Vec<f64> {
    let m = xs.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().zip(keep).map(|(x, &k)| if k { (x - m).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn mean_where(xs: &[f64], keep: &[bool]) -> f64 {
    let (s, n) = xs.iter().zip(keep).filter(|(_, &k)| k).fold((0.0, 0.0), |(s, n), (x, _)| (s + x, n + 1.0));
    s / n
}

pub fn oracle_fine_grained(fk: &[Vec<f64>], cm: &[bool], fw: &[Vec<f64>], wm: &[bool]) -> (f64, f64) {
    let e: Vec<Vec<f64>> = fk.iter().map(|k| fw.iter().map(|w| dot(k, w)).collect()).collect();
    let (t, l) = (fk.len(), fw.len());
    let t2k: Vec<f64> = (0..l)
        .map(|j| {
            let col: Vec<f64> = (0..t).map(|i| e[i][j]).collect();
            let w = softmax_where(&col, cm);
            (0..t).filter(|&i| cm[i]).map(|i| col[i] * w[i]).sum()
        })
        .collect();
    let k2t: Vec<f64> = (0..t)
        .map(|i| {
            let w = softmax_where(&e[i], wm);
            (0..l).filter(|&j| wm[j]).map(|j| e[i][j] * w[j]).sum()
        })
        .collect();
    (mean_where(&t2k, wm), mean_where(&k2t, cm))
}

pub fn oracle_pose_rgb(fp: &[Vec<f64>], fr: &[Vec<f64>], m: &[bool]) -> (f64, f64) {
    let t = fp.len();
    let v: Vec<Vec<f64>> = fp.iter().map(|p| fr.iter().map(|r| dot(p, r)).collect()).collect();
    let mut p2r = vec![vec![0.0; t]; t];
    let mut r2p = vec![vec![0.0; t]; t];
    for j in 0..t {
        let col: Vec<f64> = (0..t).map(|i| v[i][j]).collect();
        let w = softmax_where(&col, m);
        for i in 0..t {
            p2r[i][j] = v[i][j] * w[i];
        }
    }
    for i in 0..t {
        let w = softmax_where(&v[i], m);
        for j in 0..t {
            r2p[i][j] = v[i][j] * w[j];
        }
    }
    let mut s_p2r = 0.0;
    let mut s_r2p = 0.0;
    for i in (0..t).filter(|&i| m[i]) {
        let row = softmax_where(&p2r[i], m);
        s_p2r += p2r[i][i] * row[i];
        let col: Vec<f64> = (0..t).map(|k| r2p[k][i]).collect();
        let c = softmax_where(&col, m);
        s_r2p += r2p[i][i] * c[i];
    }
    (s_p2r, s_r2p)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect()
}

pub fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    let keep = rng.gen_range(0..n);
    m[keep] = true;
    m
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    let flat: Vec<f64> = rows.concat();
    Tensor::from_f64([rows.len(), rows[0].len()], &flat).unwrap()
}

/// Largest deviation of the library from the oracle over `cases` random
/// masked inputs with `T, L <= 6`.
pub fn fine_grained_worst(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (t, l, d) = (rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=5));
        let (fk, fw) = (random_rows(&mut rng, t, d), random_rows(&mut rng, l, d));
        let (cm, wm) = (random_mask(&mut rng, t), random_mask(&mut rng, l));
        let got = fine_grained_similarity(&tensor(&fk), &cm, &tensor(&fw), &wm).unwrap();
        let (t2k, k2t) = oracle_fine_grained(&fk, &cm, &fw, &wm);
        worst = worst.max((got.m_t2k - t2k).abs()).max((got.m_k2t - k2t).abs());
    }
    worst
}

pub fn pose_rgb_worst(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (t, d) = (rng.gen_range(1..=6), rng.gen_range(1..=5));
        let (fp, fr) = (random_rows(&mut rng, t, d), random_rows(&mut rng, t, d));
        let m = random_mask(&mut rng, t);
        let got = pose_rgb_similarity(&tensor(&fp), &tensor(&fr), &m).unwrap();
        let (p2r, r2p) = oracle_pose_rgb(&fp, &fr, &m);
        worst = worst.max((got.s_p2r - p2r).abs()).max((got.s_r2p - r2p).abs());
    }
    worst
}
