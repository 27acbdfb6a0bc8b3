//! Fit a 3x3 convolution to a per-pixel labelling with the tape and SGD.
//!
//! cargo run --example autodiff_basics

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scd::tensor::{ConvGeometry, Init, OptimizerConfig, ParamStore, Sgd, Tape, Tensor};

fn main() -> scd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let k = store.add("k", &[3, 2, 3, 3], Init::FanIn(18), &mut rng)?;
    let b = store.add("b", &[3], Init::Zeros, &mut rng)?;

    // label = which of the two channels is brighter, or 0 when they are close
    let x = Tensor::from_fn(&[4, 2, 12, 12], |_| rng.random_range(0.0..1.0));
    let plane = 144;
    let labels: Vec<usize> = (0..4 * plane)
        .map(|i| {
            let (n, p) = (i / plane, i % plane);
            let (a, c) = (x.data()[n * 2 * plane + p], x.data()[(n * 2 + 1) * plane + p]);
            if (a - c).abs() < 0.2 { 0 } else if a > c { 1 } else { 2 }
        })
        .collect();

    let steps = 150;
    let sgd = Sgd::new(OptimizerConfig { base_lr: 0.5, total_steps: steps, ..Default::default() })?;
    for step in 0..steps {
        store.zero_grad();
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let (kv, bv) = (t.param(&store, k), t.param(&store, b));
        let logits = t.conv2d(xv, kv, Some(bv), ConvGeometry { stride: 1, padding: 1, dilation: 1 })?;
        let loss = t.cross_entropy(logits, &labels, None, None)?;
        let value = t.value(loss).data()[0];
        t.backward(loss, &mut store)?;
        let lr = sgd.step(&mut store, step);
        if step % 30 == 0 || step + 1 == steps {
            println!("step {step:3}  lr {lr:.4}  loss {value:.4}");
        }
    }
    Ok(())
}
