use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Fusion, FusionConfig, FusionVariant};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::gradcheck::{check_sampled, probe, randn, GradCheck, COMPOSED_TOL, FD_EPS};
use crate::nn::{Bound, Init, ParamGroup, ParamStore};

/// Minimum entries perturbed per input tensor; small modules get more so
/// that every check covers at least 120 entries.
const PER_INPUT: usize = 8;
const MIN_ENTRIES: usize = 120;

pub(crate) fn tiny_config(variant: FusionVariant, heads: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        clips: 5,
        text_vocab: 8,
        fusion: FusionConfig {
            variant,
            n_neighbors: 3,
            heads,
            ..FusionConfig::default()
        },
        ..ModelConfig::default()
    }
}

/// Builds a fusion module with every parameter moved off its
/// initialization; offset weights get a wide spread so that sampling
/// positions are fractional.
pub(crate) fn perturbed(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<(ParamStore<f64>, Fusion)> {
    let mut store = ParamStore::new();
    let fusion = Fusion::new(
        &mut Init {
            store: &mut store,
            rng,
            group: ParamGroup::Encoder,
        },
        cfg,
    )?;
    for p in store.iter_mut() {
        let spread = if p.name.contains(".offset.") { 0.4 } else { 0.05 };
        for v in p.value.data_mut() {
            *v += rng.gen_range(-spread..spread);
        }
    }
    Ok((store, fusion))
}

/// Finite-difference checks of every fusion variant, differentiating both
/// input streams and the parameters.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    // Second sample has two padded clips.
    let mask = [true, true, true, true, true, true, true, true, false, false];
    let arms = [
        (FusionVariant::Cgaf, 1),
        (FusionVariant::Cgaf, 2),
        (FusionVariant::AddMlp, 1),
        (FusionVariant::ConcateMlp, 1),
        (FusionVariant::ConcateTrans, 2),
        (FusionVariant::CrossAtten, 2),
    ];
    for (variant, heads) in arms {
        let cfg = tiny_config(variant, heads);
        let (store, fusion) = perturbed(&cfg, &mut rng)?;
        let mut inputs = vec![randn(&mut rng, &[2, 5, 16], 1.0), randn(&mut rng, &[2, 5, 16], 1.0)];
        inputs.extend(store.values());
        let name = format!("fusion/{}_h{heads}/seed{seed}", variant.name());
        let per = MIN_ENTRIES.div_ceil(inputs.len()).max(PER_INPUT);
        out.push(check_sampled(&name, &inputs, per, seed, FD_EPS, COMPOSED_TOL, |tape, v| {
            let p = Bound::from_vars(tape, v[2..].to_vec());
            probe(fusion.forward(&p, &v[0], &v[1], &mask)?, seed)
        })?);
    }
    Ok(out)
}
