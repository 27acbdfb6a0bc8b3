//! Train the toy network on synthetic 64x64 scenes and report held-out metrics.
//!
//! cargo run --example train_toy -- [samples] [epochs]

use scd::dataset::{synth_generate, SynthConfig};
use scd::model::{evaluate, train_base, Asn, ModelConfig, TrainOptions};

fn main() -> scd::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);

    let (records, _) = synth_generate(&SynthConfig { count, seed: 3, ..Default::default() })?;
    let (train, test) = records.split_at(count * 4 / 5);

    let mut model = Asn::new(ModelConfig::toy(4))?;
    println!("{} parameters", model.store.num_scalars());
    let opts = TrainOptions { epochs, validate_every: 2, ..TrainOptions::toy() };
    train_base(&mut model, train, Some(test), &opts, 0, &mut |_, log| {
        print!("epoch {:2} loss {:.4} (sem {:.4}/{:.4}, change {:.4})", log.epoch, log.loss, log.loss_m1, log.loss_m2, log.loss_c);
        match (log.val_miou, log.val_sek) {
            (Some(m), Some(s)) => println!("  val mIOU {m:.4} SeK {s:.4}"),
            _ => println!(),
        }
        Ok(())
    })?;
    let r = evaluate(&model, test, false)?;
    println!("held out: OA {:.4} mIOU {:.4} SeK {:.4}", r.oa, r.miou, r.sek);
    Ok(())
}
