//! Finite-difference suites grouped by subsystem, shared by the test
//! suite and the `gradcheck` CLI subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check, probe, randn, GradCheck};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance for primitive tensor operations.
pub const PRIMITIVE_TOL: f64 = 1e-5;
/// Tolerance for composed model paths.
pub const COMPOSED_TOL: f64 = 1e-4;
/// Central-difference step.
pub const FD_EPS: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub checks: Vec<GradCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GradCheck::passed)
    }

    pub fn worst(&self) -> Option<&GradCheck> {
        self.checks
            .iter()
            .max_by(|a, b| (a.max_rel_err / a.tol).total_cmp(&(b.max_rel_err / b.tol)))
    }
}

pub fn suite_names() -> &'static [&'static str] {
    &["tensor", "encoders", "fusion", "objectives"]
}

/// Runs one suite (or `"all"`) over seeds `0..seeds`.
pub fn run_suite(name: &str, seeds: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    let names: Vec<&str> = if name == "all" {
        suite_names().to_vec()
    } else if suite_names().contains(&name) {
        vec![name]
    } else {
        return Err(Error::Config(format!("unknown gradcheck module {name:?}")));
    };
    for seed in 0..seeds {
        for n in &names {
            let checks = match *n {
                "tensor" => tensor_suite(seed)?,
                "encoders" => crate::encoders::gradcheck_suite(seed)?,
                "fusion" => crate::fusion::gradcheck_suite(seed)?,
                "objectives" => crate::objectives::gradcheck_suite(seed)?,
                _ => unreachable!(),
            };
            report.checks.extend(checks);
        }
    }
    Ok(report)
}

/// Uniform draws kept at least `margin` away from integers.
fn off_integer(rng: &mut ChaCha8Rng, lo: f64, hi: f64, margin: f64) -> f64 {
    loop {
        let v: f64 = rng.gen_range(lo..hi);
        let frac = v - v.floor();
        if frac > margin && frac < 1.0 - margin {
            return v;
        }
    }
}

/// Normal draws kept away from zero, for kinked activations.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = randn(rng, shape, 1.0);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v);
        }
    }
    t
}

pub fn tensor_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let tol = PRIMITIVE_TOL;
    let tag = |n: &str| format!("tensor/{n}/seed{seed}");

    let a = randn(&mut rng, &[8, 10], 1.0);
    let b = randn(&mut rng, &[10, 6], 1.0);
    out.push(check(&tag("matmul"), &[a, b], FD_EPS, tol, |_, v| probe(v[0].matmul(&v[1])?, seed))?);

    let a = randn(&mut rng, &[3, 4, 6], 1.0);
    let b = randn(&mut rng, &[6, 5], 1.0);
    out.push(check(&tag("matmul_shared_rhs"), &[a, b], FD_EPS, tol, |_, v| probe(v[0].matmul(&v[1])?, seed))?);

    let a = randn(&mut rng, &[4, 5], 1.0);
    let b = randn(&mut rng, &[3, 5, 6], 1.0);
    out.push(check(&tag("matmul_shared_lhs"), &[a, b], FD_EPS, tol, |_, v| probe(v[0].matmul(&v[1])?, seed))?);

    let a = randn(&mut rng, &[2, 6, 5], 1.0);
    let b = randn(&mut rng, &[2, 5, 6], 1.0);
    out.push(check(&tag("matmul_batched"), &[a, b], FD_EPS, tol, |_, v| probe(v[0].matmul(&v[1])?, seed))?);

    let a = randn(&mut rng, &[10, 12], 1.0);
    let b = randn(&mut rng, &[10, 12], 1.0);
    out.push(check(&tag("add_sub_mul"), &[a, b], FD_EPS, tol, |_, v| {
        let s = v[0].add(&v[1])?;
        let d = v[0].sub(&v[1])?;
        probe(s.mul(&d)?.add(&v[0].mul(&v[1])?)?, seed)
    })?);

    let x = randn(&mut rng, &[10, 12], 1.0);
    let bias = randn(&mut rng, &[12], 1.0);
    let s = randn(&mut rng, &[], 1.0);
    out.push(check(&tag("bias_scale"), &[x, bias, s], FD_EPS, tol, |_, v| {
        probe(v[0].add_bias(&v[1])?.mul_scalar(&v[2])?.scale(0.7).add_scalar(0.3), seed)
    })?);

    let x = randn(&mut rng, &[3, 4, 5, 2], 1.0);
    out.push(check(&tag("permute_reshape_sum"), &[x], FD_EPS, tol, |_, v| {
        let p = v[0].permute(&[2, 0, 3, 1])?.reshape(&[5, 6, 4])?;
        let s = p.sum_axis(1)?;
        probe(s.mul(&s)?, seed)
    })?);

    let x = randn(&mut rng, &[6, 5, 4], 1.5);
    let mask: Vec<bool> = (0..120).map(|i| i % 7 != 3).collect();
    out.push(check(&tag("softmax"), &[x.clone()], FD_EPS, tol, |_, v| probe(v[0].softmax(1)?, seed))?);
    out.push(check(&tag("masked_softmax"), &[x.clone()], FD_EPS, tol, |_, v| {
        probe(v[0].masked_softmax(2, Some(&mask))?, seed)
    })?);
    out.push(check(&tag("log_softmax"), &[x], FD_EPS, tol, |_, v| probe(v[0].log_softmax(0)?, seed))?);

    let x = randn(&mut rng, &[10, 12], 0.5);
    out.push(check(&tag("exp_ln"), &[x], FD_EPS, tol, |_, v| {
        let e = v[0].exp();
        probe(e.add_scalar(1.0).ln().add(&e)?, seed)
    })?);

    let x = away_from_zero(&mut rng, &[10, 12]);
    out.push(check(&tag("relu_clamp"), &[x], FD_EPS, tol, |_, v| {
        probe(v[0].relu().add(&v[0].clamp(-0.5, 0.5))?, seed)
    })?);

    let x = randn(&mut rng, &[10, 12], 1.0);
    let gain = randn(&mut rng, &[12], 1.0);
    let bias = randn(&mut rng, &[12], 1.0);
    out.push(check(&tag("layer_norm_gelu"), &[x, gain, bias], FD_EPS, tol, |_, v| {
        probe(v[0].layer_norm(&v[1], &v[2], 1e-5)?.gelu(), seed)
    })?);

    let x = randn(&mut rng, &[12, 9], 1.0);
    out.push(check(&tag("l2_normalize"), &[x], FD_EPS, tol, |_, v| probe(v[0].l2_normalize(1e-12)?, seed))?);

    let a = randn(&mut rng, &[4, 3, 5], 1.0);
    let b = randn(&mut rng, &[4, 2, 5], 1.0);
    out.push(check(&tag("concat_narrow_select"), &[a, b], FD_EPS, tol, |_, v| {
        let c = Var::concat(&[v[0], v[1]], 1)?;
        let n = c.narrow(1, 1, 3)?;
        let s = c.index_select(1, &[4, 0, 0, 2])?;
        probe(Var::concat(&[n, s], 1)?, seed)
    })?);

    let seq = randn(&mut rng, &[2, 6, 5], 1.0);
    let pos_data: Vec<f64> = (0..2 * 6 * 4).map(|_| off_integer(&mut rng, 0.0, 6.0, 0.05)).collect();
    let pos = Tensor::new([2, 6, 4], pos_data)?;
    out.push(check(&tag("interp_gather"), &[seq.clone(), pos], FD_EPS, tol, |_, v| {
        probe(v[0].interp_gather(&v[1], None)?, seed)
    })?);

    let raw: Vec<f64> = (0..2 * 6 * 4).map(|_| off_integer(&mut rng, -8.0, 12.0, 0.05)).collect();
    let raw = Tensor::new([2, 6, 4], raw)?;
    out.push(check(&tag("wrap_interp_gather"), &[seq, raw], FD_EPS, tol, |_, v| {
        let p = v[1].wrap(&[6, 4])?;
        probe(v[0].interp_gather(&p, Some(&[6, 4]))?, seed)
    })?);

    let x = randn(&mut rng, &[3, 9, 4], 1.0);
    out.push(check(&tag("unfold1d"), &[x], FD_EPS, tol, |_, v| probe(v[0].unfold1d(5, 2, 2)?, seed))?);

    Ok(out)
}
