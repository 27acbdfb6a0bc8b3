//! The siamese network against the intuitive per-date baseline on one budget.
//!
//! cargo run --example baseline_comparison

use scd::dataset::{synth_generate, SynthConfig};
use scd::model::{evaluate, evaluate_baseline, train_base, train_baseline, Asn, Baseline, ModelConfig, TrainOptions};

fn main() -> scd::Result<()> {
    let (records, _) = synth_generate(&SynthConfig { count: 60, seed: 8, ..Default::default() })?;
    let (train, test) = records.split_at(48);
    let opts = TrainOptions { epochs: 8, validate_every: 0, ..TrainOptions::toy() };

    let mut asn = Asn::new(ModelConfig::toy(4))?;
    train_base(&mut asn, train, None, &opts, 0, &mut |_, _| Ok(()))?;
    let mut baseline = Baseline::new(ModelConfig::toy(4))?;
    train_baseline(&mut baseline, train, None, &opts, 0, &mut |_, _| Ok(()))?;

    let a = evaluate(&asn, test, false)?;
    let b = evaluate_baseline(&baseline, test)?;
    println!("{:<10} {:>7} {:>7} {:>7}", "", "OA", "mIOU", "SeK");
    println!("{:<10} {:>7.4} {:>7.4} {:>7.4}", "siamese", a.oa, a.miou, a.sek);
    println!("{:<10} {:>7.4} {:>7.4} {:>7.4}", "baseline", b.oa, b.miou, b.sek);
    Ok(())
}
