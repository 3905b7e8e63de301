//! Exhaustive ranking oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seds_core::eval::{rank_queries, report, RetrievalDirection};
use seds_core::Tensor;

pub const DIRS: [RetrievalDirection; 2] = [RetrievalDirection::TextToVideo, RetrievalDirection::VideoToText];

/// Sorts every candidate list by descending score (stable, so ties keep
/// index order) and reads off where the ground truth lands.
pub fn sort_oracle(m: &[f64], b: usize, dir: RetrievalDirection) -> Vec<usize> {
    (0..b)
        .map(|q| {
            let scores: Vec<f64> = (0..b)
                .map(|c| match dir {
                    RetrievalDirection::TextToVideo => m[q * b + c],
                    RetrievalDirection::VideoToText => m[c * b + q],
                })
                .collect();
            let mut order: Vec<usize> = (0..b).collect();
            order.sort_by(|&x, &y| scores[y].partial_cmp(&scores[x]).unwrap());
            1 + order.iter().position(|&c| c == q).unwrap()
        })
        .collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, b: usize) -> Vec<f64> {
    // Coarse values so ties are common.
    let coarse = rng.gen_bool(0.5);
    (0..b * b)
        .map(|_| if coarse { rng.gen_range(0..4) as f64 } else { rng.gen_range(-1.0..1.0) })
        .collect()
}

/// Number of (matrix, direction) cases out of `cases` random matrices with
/// `B <= 16` where the library disagrees with the oracle.
pub fn rank_mismatches(seed: u64, cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let b = rng.gen_range(1..=16);
        let m = random_matrix(&mut rng, b);
        let t = Tensor::new([b, b], m.clone()).unwrap();
        for dir in DIRS {
            if rank_queries(&t, dir).unwrap() != sort_oracle(&m, b, dir) {
                bad += 1;
            }
        }
    }
    bad
}

/// Number of random rank lists whose report disagrees with direct counts.
pub fn report_mismatches(seed: u64, cases: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=40);
        let ranks: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=n)).collect();
        let r = report(&ranks, RetrievalDirection::TextToVideo).unwrap();
        let recall = |k: usize| 100.0 * ranks.iter().filter(|&&x| x <= k).count() as f64 / n as f64;
        // Median as the smallest value with at least half the ranks at or
        // below it, averaged with its successor when n is even.
        let mut s = ranks.clone();
        s.sort();
        let lower = *s.iter().find(|&&v| 2 * s.iter().filter(|&&x| x <= v).count() >= n).unwrap();
        let medr = if n % 2 == 1 { lower as f64 } else { (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0 };
        if (r.r1, r.r5, r.r10, r.medr) != (recall(1), recall(5), recall(10), medr) || r.ranks != ranks {
            bad += 1;
        }
    }
    bad
}
