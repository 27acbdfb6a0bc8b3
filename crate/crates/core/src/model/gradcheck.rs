//! Finite-difference check of the whole network on a tiny scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::predict::{loss_vars, ClassWeights, GroundTruth};
use super::{Asn, ModelConfig, ATL_PREFIX};
use crate::tensor::gradcheck::{check, GradCheckConfig, GradCheckReport};
use crate::tensor::Tensor;
use crate::Result;

/// Joint loss of the refined outputs of a toy model on one random 8x8 pair,
/// differentiated with respect to both images and every parameter.
///
/// The zero-initialised last layers of the refinement series are replaced by
/// small random values so that their inputs receive gradient too.
pub fn check_model(seed: u64, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut cfg = ModelConfig::toy(3);
    cfg.seed = seed;
    let mut model = Asn::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c0c);
    for p in model.store.iter_mut() {
        if p.name.starts_with(ATL_PREFIX) && p.name.contains(".l1.") {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    let side = 8;
    let d = model.config.input_channels;
    let image = |rng: &mut ChaCha8Rng| Tensor::from_fn(&[1, d, side, side], |_| rng.random_range(0.0..1.0));
    let (i1, i2) = (image(&mut rng), image(&mut rng));
    let n = model.config.num_classes as u8;
    let mut gt = GroundTruth {
        n: 1,
        height: side,
        width: side,
        label1: Vec::new(),
        label2: Vec::new(),
        change: Vec::new(),
    };
    for _ in 0..side * side {
        if rng.random_bool(0.4) {
            gt.change.push(1);
            gt.label1.push(rng.random_range(1..=n));
            gt.label2.push(rng.random_range(1..=n));
        } else {
            gt.change.push(0);
            gt.label1.push(0);
            gt.label2.push(0);
        }
    }
    let weights = ClassWeights::default();
    let (alpha, beta) = (model.config.alpha, model.config.beta);
    let model_ref = model.clone();
    check(
        |t, vars, store| {
            let mut m = model_ref.clone();
            m.store = store.clone();
            let fv = m.forward_vars(t, vars[0], vars[1])?;
            let refined = m.atl_vars(t, fv.m1, fv.m2, fv.c)?;
            Ok(loss_vars(t, refined, &gt, alpha, beta, &weights)?.total)
        },
        &[("image1", i1), ("image2", i2)],
        &mut model.store,
        config,
    )
}
