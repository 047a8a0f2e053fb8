use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Ctx, Merge, Mode, ModelConfig, ParamStore, PyramidConfig, Reasoning, ScoreFn, Spgat};
use crate::error::Result;
use crate::gradcheck::{check, CheckReport};
use crate::tensor::Tensor;

/// Adds `scale * N(0, 1)` noise to every trainable tensor. Freshly
/// initialized biases are exactly zero, which places activations of
/// all-zero inputs on an activation kink where finite differences are
/// meaningless; checks run from a jittered point instead.
pub fn jitter(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.trainable_ids() {
        let name = store.entries()[id].name.clone();
        if let Ok(t) = store.get_mut(&name) {
            for v in t.data_mut() {
                *v += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}

/// Coordinates differenced per parameter tensor in the end-to-end check.
pub const END_TO_END_SAMPLES: usize = 8;

/// Central-difference check of the full network (pyramid, attention,
/// merge, classifier, cross-entropy) on one `[1, 1, 16, 3, 3]` patch with
/// three classes at toy widths. Every input and parameter tensor is probed
/// at `sample` random coordinates (all of them when `None`).
pub fn end_to_end_gradcheck(seed: u64, sample: Option<usize>) -> Result<CheckReport> {
    let config = ModelConfig {
        bands: 16,
        patch: 3,
        classes: 3,
        pyramid: PyramidConfig::toy(),
        reasoning: Reasoning::Attention(ScoreFn::DotProduct),
        merge: Merge::Attention,
    };
    let mut model = Spgat::new(config.clone(), seed)?;
    jitter(&mut model.params, 0.1, seed ^ 0x5eed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[1, 1, 16, 3, 3], &mut rng);
    let mut inputs = vec![x];
    inputs.extend(
        model
            .params
            .trainable_ids()
            .into_iter()
            .map(|id| model.params.entries()[id].value.clone()),
    );
    let label = [(seed % 3) as usize];
    check("spgat end-to-end", &inputs, sample, seed, |tape, vars| {
        let mut ctx = Ctx::with_overrides(tape, &model.params, Mode::Train, &vars[1..])?;
        let logits = Spgat::forward(&config, &mut ctx, &vars[0])?;
        ctx.tape.cross_entropy(&logits, &label)
    })
}
