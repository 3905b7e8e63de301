//! Central finite-difference gradient checking.
//!
//! Each check evaluates a scalar function twice per perturbed entry on a
//! fresh, gradient-free tape and compares against the tape's backward pass.

mod suites;

pub use suites::{run_suite, suite_names, SuiteReport, COMPOSED_TOL, FD_EPS, PRIMITIVE_TOL};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Below this magnitude errors are measured absolutely instead of relative
/// to the gradient entry.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks `f` against central differences over every entry of every input.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], eps: f64, tol: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    check_entries(name, inputs, None, eps, tol, f)
}

/// Like [`check`], but perturbs at most `per_input` seeded-random entries of
/// each input. Used for model-sized parameter sets.
pub fn check_sampled<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    per_input: usize,
    seed: u64,
    eps: f64,
    tol: f64,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    check_entries(name, inputs, Some((per_input, seed)), eps, tol, f)
}

fn check_entries<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    sample: Option<(usize, u64)>,
    eps: f64,
    tol: f64,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };
    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut work = inputs.to_vec();
    let mut rng = {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(sample.map_or(0, |s| s.1))
    };
    for (i, g) in analytic.iter().enumerate() {
        let all = inputs[i].len();
        let picked: Vec<usize> = match sample {
            Some((k, _)) if k < all => rand::seq::index::sample(&mut rng, all, k).into_vec(),
            _ => (0..all).collect(),
        };
        for j in picked {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let e = rel_err(g.data()[j], numeric);
            worst = if e.is_nan() { f64::NAN } else { worst.max(e) };
            entries += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_err: worst,
        entries,
        tol,
    })
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            v * scale
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Reduces a tensor output to a scalar with fixed random weights so that
/// every output entry contributes a distinct coefficient.
pub fn probe<'t>(out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
    let w = randn(&mut rng, &out.shape(), 1.0);
    out.mul(&out.tape().constant(w))?.sum_all()
}
