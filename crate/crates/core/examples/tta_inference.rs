//! Plain and multi-scale flipped prediction for one pair, with PNG outputs.
//!
//! cargo run --example tta_inference -- /tmp/tta

use std::path::PathBuf;

use scd::dataset::{png_io, quantize, synth_generate, LabelPalette, Raster, SynthConfig};
use scd::model::{train_base, Asn, ModelConfig, TrainOptions, TTA_SCALES};

fn main() -> scd::Result<()> {
    let out = std::env::args().nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("scd_tta_out"));
    let cfg = SynthConfig { count: 30, seed: 2, ..Default::default() };
    let (records, _) = synth_generate(&cfg)?;
    let mut model = Asn::new(ModelConfig::toy(4))?;
    let opts = TrainOptions { epochs: 4, validate_every: 0, ..TrainOptions::toy() };
    train_base(&mut model, &records[..25], None, &opts, 0, &mut |_, _| Ok(()))?;

    let r = &records[27];
    let (i1, i2) = (r.image_tensor(1), r.image_tensor(2));
    let plain = model.predict(&i1, &i2, false)?.remove(0);
    model.reset_forward_calls();
    let tta = model.tta_predict(&i1, &i2, &TTA_SCALES, true, false)?.remove(0);
    println!("{} forward passes for {} scales with flips", model.forward_calls(), TTA_SCALES.len());

    let agree = plain.pairs.pairs.iter().zip(&tta.pairs.pairs).filter(|(a, b)| a == b).count();
    println!("plain and averaged maps agree on {agree} of {} pixels", plain.pairs.pairs.len());
    let accuracy = |p: &scd::model::SemanticChangePrediction| {
        p.pairs.pairs.iter().zip(&r.pairs().pairs).filter(|(a, b)| a == b).count()
    };
    println!("pixels matching the truth: plain {}, averaged {}", accuracy(&plain), accuracy(&tta));

    let palette = LabelPalette::with_classes(&cfg.names())?;
    let (h, w) = (r.height, r.width);
    let (l1, l2) = tta.pairs.labels();
    png_io::write(&out.join("overlay.png"), &palette.side_by_side(h, w, &l1, &l2))?;
    png_io::write(&out.join("truth.png"), &palette.side_by_side(h, w, &r.label1, &r.label2))?;
    let prob = Raster { width: w, height: h, channels: 1, data: tta.change_prob.iter().map(|&p| quantize(p)).collect() };
    png_io::write(&out.join("change_prob.png"), &prob)?;
    println!("wrote overlay.png, truth.png and change_prob.png to {}", out.display());
    Ok(())
}
