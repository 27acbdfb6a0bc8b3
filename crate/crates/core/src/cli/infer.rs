use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{read_toml, write_effective, RunConfig, TtaConfig, CONFIG_FILE};
use super::{InferArgs, Outcome};
use crate::dataset::{png_io, quantize, LabelPalette, Raster};
use crate::model::{Asn, ModelConfig, SemanticChangePrediction};
use crate::tensor::{checkpoint, Tensor};
use crate::{Error, Result};

#[derive(Debug, Serialize)]
struct Effective {
    checkpoint: PathBuf,
    im1: PathBuf,
    im2: PathBuf,
    id: String,
    use_atl: bool,
    tta: TtaConfig,
    class_names: Vec<String>,
    model: ModelConfig,
}

/// `[1, 3, H, W]` in `[0, 1]`.
pub(crate) fn image_tensor(r: &Raster) -> Tensor {
    let (h, w) = (r.height, r.width);
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = r.data[p * 3 + c] as f64 / 255.0;
        }
    }
    Tensor::new(&[1, 3, h, w], data).expect("raster extent is valid")
}

/// Label maps, change probability and palette overlay under `out`, in the
/// `label1/`, `label2/`, `change_prob/` and `overlay/` subdirectories.
pub(crate) fn write_prediction(
    out: &Path,
    id: &str,
    pred: &SemanticChangePrediction,
    palette: &LabelPalette,
) -> Result<()> {
    let (h, w) = (pred.pairs.height, pred.pairs.width);
    let (l1, l2) = pred.pairs.labels();
    let gray = |data: Vec<u8>| Raster { width: w, height: h, channels: 1, data };
    let file = format!("{id}.png");
    png_io::write(&out.join("label1").join(&file), &gray(l1.clone()))?;
    png_io::write(&out.join("label2").join(&file), &gray(l2.clone()))?;
    png_io::write(
        &out.join("change_prob").join(&file),
        &gray(pred.change_prob.iter().map(|&p| quantize(p)).collect()),
    )?;
    png_io::write(&out.join("overlay").join(&file), &palette.side_by_side(h, w, &l1, &l2))?;
    Ok(())
}

pub fn run(a: InferArgs) -> Result<Outcome> {
    let cfg_path = match &a.config {
        Some(p) => p.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default().join(CONFIG_FILE),
    };
    if !cfg_path.exists() {
        return Err(Error::Config(format!(
            "no run configuration at {}; pass --config",
            cfg_path.display()
        )));
    }
    let cfg: RunConfig = read_toml(&cfg_path)?;
    cfg.model.validate()?;
    let tta = match &a.tta {
        Some(s) => TtaConfig::parse(s)?,
        None => cfg.tta.clone(),
    };
    let mut model = Asn::new(cfg.model.clone())?;
    checkpoint::load(&mut model.store, &a.checkpoint)?;
    let r1 = png_io::read_rgb(&a.im1)?;
    let r2 = png_io::read_rgb(&a.im2)?;
    if (r1.height, r1.width) != (r2.height, r2.width) {
        return Err(Error::Format(format!(
            "{}: extent {}x{} differs from {}x{} of {}",
            a.im2.display(),
            r2.height,
            r2.width,
            r1.height,
            r1.width,
            a.im1.display()
        )));
    }
    let id = a
        .im1
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("pair")
        .to_string();
    let use_atl = !a.no_atl;
    let pred = model
        .tta_predict(&image_tensor(&r1), &image_tensor(&r2), &tta.scales, tta.flip, use_atl)?
        .remove(0);
    let class_names = if cfg.dataset.class_names.len() == cfg.model.num_classes {
        cfg.dataset.class_names.clone()
    } else {
        (1..=cfg.model.num_classes).map(|c| format!("c{c}")).collect()
    };
    let palette = LabelPalette::with_classes(&class_names)?;
    write_effective(
        &a.out,
        &Effective {
            checkpoint: a.checkpoint.clone(),
            im1: a.im1.clone(),
            im2: a.im2.clone(),
            id: id.clone(),
            use_atl,
            tta,
            class_names,
            model: cfg.model,
        },
    )?;
    write_prediction(&a.out, &id, &pred, &palette)?;
    let changed = pred.pairs.pairs.iter().filter(|p| **p != (0, 0)).count();
    println!(
        "{id}: {changed} of {} pixels changed; outputs in {}",
        pred.pairs.pairs.len(),
        a.out.display()
    );
    Ok(Outcome::Ok)
}
