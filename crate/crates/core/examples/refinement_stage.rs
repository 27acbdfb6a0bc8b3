//! Base training followed by the adaptive-threshold refinement stage.
//!
//! cargo run --example refinement_stage

use scd::dataset::{synth_generate, SynthConfig};
use scd::model::{evaluate, refinement_weights, train_base, train_refinement, Asn, ModelConfig, TrainOptions};

fn main() -> scd::Result<()> {
    let (records, _) = synth_generate(&SynthConfig { count: 60, seed: 5, ..Default::default() })?;
    let (train, test) = records.split_at(48);
    let opts = TrainOptions { epochs: 8, atl_epochs: 6, validate_every: 0, ..TrainOptions::toy() };

    let mut model = Asn::new(ModelConfig::toy(4))?;
    train_base(&mut model, train, None, &opts, 0, &mut |_, _| Ok(()))?;
    let before = evaluate(&model, test, false)?;

    let weights = refinement_weights(train, 4);
    println!("semantic class weights {:?}", weights.semantic.as_deref().unwrap_or(&[]));
    println!("change class weights   {:?}", weights.change.as_deref().unwrap_or(&[]));
    train_refinement(&mut model, train, None, &opts, &weights, 0, &mut |_, log| {
        println!("refinement epoch {} loss {:.4}", log.epoch, log.loss);
        Ok(())
    })?;
    let after = evaluate(&model, test, true)?;
    println!("base:    mIOU {:.4} SeK {:.4}", before.miou, before.sek);
    println!("refined: mIOU {:.4} SeK {:.4}", after.miou, after.sek);
    Ok(())
}
