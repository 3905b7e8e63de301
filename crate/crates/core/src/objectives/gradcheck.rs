use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{joint_loss, Features, LossConfig};
use crate::error::Result;
use crate::gradcheck::{check, randn, GradCheck, COMPOSED_TOL, FD_EPS};
use crate::tensor::Tensor;

/// Finite-difference checks of the joint loss with respect to every feature
/// stream and the temperature, plus the full model path ending in the loss.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip_mask = [true, true, true, true, true, true, false, false, true, true, true, false];
    let token_mask = [true, true, true, true, false, false, true, true, true];
    let cfg = LossConfig::default();
    let mut out = Vec::new();
    for (name, normalize, spread) in [("joint_loss", true, 1.0), ("joint_loss_raw", false, 0.3)] {
        let inputs = vec![
            randn(&mut rng, &[3, 4, 6], spread),
            randn(&mut rng, &[3, 4, 6], spread),
            randn(&mut rng, &[3, 4, 6], spread),
            randn(&mut rng, &[3, 3, 6], spread),
            Tensor::from_f64([1], &[(2.0f64).ln()])?,
        ];
        out.push(check(&format!("objectives/{name}/seed{seed}"), &inputs, FD_EPS, COMPOSED_TOL, |_, v| {
            let f = Features {
                pose: v[0],
                rgb: v[1],
                fused: v[2],
                text: v[3],
                clip_mask: &clip_mask,
                token_mask: &token_mask,
            };
            let scale = v[4].exp();
            Ok(joint_loss(&cfg, normalize, &scale, &f)?.total)
        })?);
    }
    out.push(crate::model::end_to_end_gradcheck(seed)?);
    Ok(out)
}
