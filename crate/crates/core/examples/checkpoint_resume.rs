//! Interrupt training, restore weights and momentum, and continue identically.
//!
//! cargo run --example checkpoint_resume

use scd::dataset::{synth_generate, SynthConfig};
use scd::model::{train_base, Asn, ModelConfig, TrainOptions};
use scd::tensor::checkpoint::{encode, restore, Contents};

fn losses(model: &mut Asn, train: &[scd::dataset::SampleRecord], opts: &TrainOptions, start: usize, stop: Option<usize>) -> scd::Result<(Vec<f64>, Option<Vec<u8>>)> {
    let mut seen = Vec::new();
    let mut snapshot = None;
    let r = train_base(model, train, None, opts, start, &mut |m, log| {
        seen.push(log.loss);
        if Some(log.epoch) == stop {
            snapshot = Some(encode(&m.store, Contents::WeightsAndMomentum));
            return Err(scd::Error::State("stop".into()));
        }
        Ok(())
    });
    if stop.is_none() {
        r?;
    }
    Ok((seen, snapshot))
}

fn main() -> scd::Result<()> {
    let (records, _) = synth_generate(&SynthConfig { count: 12, size: 32, seed: 1, ..Default::default() })?;
    let mut opts = TrainOptions { epochs: 4, validate_every: 0, ..TrainOptions::toy() };
    opts.augment.crop = 32;

    let mut full = Asn::new(ModelConfig::toy(4))?;
    let (reference, _) = losses(&mut full, &records, &opts, 0, None)?;

    let mut first = Asn::new(ModelConfig::toy(4))?;
    let (head, snap) = losses(&mut first, &records, &opts, 0, Some(1))?;
    let bytes = snap.expect("snapshot taken");
    println!("checkpoint after epoch 1: {} bytes", bytes.len());

    let mut resumed = Asn::new(ModelConfig::toy(4))?;
    restore(&mut resumed.store, &bytes)?;
    let (tail, _) = losses(&mut resumed, &records, &opts, 2, None)?;

    let joined: Vec<f64> = head.into_iter().chain(tail).collect();
    for (e, (a, b)) in reference.iter().zip(&joined).enumerate() {
        println!("epoch {e}: uninterrupted {a:.10}  resumed {b:.10}");
    }
    println!("identical: {}", reference.iter().zip(&joined).all(|(a, b)| a.to_bits() == b.to_bits()));
    Ok(())
}
