use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::write_effective;
use super::{Outcome, ScoreArgs};
use crate::dataset::{png_io, DatasetManifest, Raster, MANIFEST_FILE};
use crate::metrics::{ChangeTypeIndex, ConfusionMatrix, MetricReport, PairMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    pub samples: usize,
}

/// Four label-map files of one scored sample.
#[derive(Debug, Clone, Deserialize)]
struct PairRow {
    pred_label1: PathBuf,
    pred_label2: PathBuf,
    gt_label1: PathBuf,
    gt_label2: PathBuf,
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "png") {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(s.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn rows_from_dirs(pred: &Path, gt: &Path) -> Result<Vec<PairRow>> {
    let ids = png_stems(&gt.join("label1"))?;
    if ids.is_empty() {
        return Err(Error::Config(format!("no ground-truth maps under {}", gt.join("label1").display())));
    }
    Ok(ids
        .iter()
        .map(|id| {
            let f = format!("{id}.png");
            PairRow {
                pred_label1: pred.join("label1").join(&f),
                pred_label2: pred.join("label2").join(&f),
                gt_label1: gt.join("label1").join(&f),
                gt_label2: gt.join("label2").join(&f),
            }
        })
        .collect())
}

fn rows_from_csv(path: &Path) -> Result<Vec<PairRow>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        let r: PairRow = r.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        rows.push(PairRow {
            pred_label1: base.join(r.pred_label1),
            pred_label2: base.join(r.pred_label2),
            gt_label1: base.join(r.gt_label1),
            gt_label2: base.join(r.gt_label2),
        });
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{} lists no samples", path.display())));
    }
    Ok(rows)
}

fn pair_map(l1: &Path, l2: &Path, extent: Option<(usize, usize)>) -> Result<PairMap> {
    let a = png_io::read_gray(l1)?;
    let b = png_io::read_gray(l2)?;
    let want = extent.unwrap_or((a.height, a.width));
    for (p, r) in [(l1, &a), (l2, &b)] {
        if (r.height, r.width) != want {
            return Err(Error::Format(format!(
                "{}: extent {}x{} differs from {}x{}",
                p.display(),
                r.height,
                r.width,
                want.0,
                want.1
            )));
        }
    }
    let mixed = a.data.iter().zip(&b.data).filter(|(x, y)| (**x == 0) != (**y == 0)).count();
    if mixed > 0 {
        return Err(Error::AnnotationConsistency { count: mixed, path: Some(l1.to_path_buf()) });
    }
    PairMap::from_labels(a.height, a.width, &a.data, &b.data)
}

fn check_labels(m: &PairMap, n: usize, path: &Path) -> Result<()> {
    match m.pairs.iter().flat_map(|&(a, b)| [a, b]).find(|&l| l as usize > n) {
        Some(l) => Err(Error::Label(format!("{}: label {l} exceeds {n} classes", path.display()))),
        None => Ok(()),
    }
}

/// Accumulate one confusion matrix over every listed sample.
fn score_rows(rows: &[PairRow], num_classes: usize) -> Result<MetricReport> {
    let index = ChangeTypeIndex::new(num_classes)?;
    let mut cm = ConfusionMatrix::for_index(&index);
    for r in rows {
        let gt = pair_map(&r.gt_label1, &r.gt_label2, None)?;
        let pred = pair_map(&r.pred_label1, &r.pred_label2, Some((gt.height, gt.width)))?;
        check_labels(&gt, num_classes, &r.gt_label1)?;
        check_labels(&pred, num_classes, &r.pred_label1)?;
        cm.accumulate(&index, &pred, &gt)?;
    }
    cm.report(&index)
}

/// Score every `label1/<id>.png` of `gt` against the same files under `pred`.
pub fn score_dirs(pred: &Path, gt: &Path, num_classes: usize) -> Result<MetricReport> {
    score_rows(&rows_from_dirs(pred, gt)?, num_classes)
}

fn max_label(rows: &[PairRow]) -> Result<usize> {
    let mut m = 0u8;
    for r in rows {
        let l: Raster = png_io::read_gray(&r.gt_label1)?;
        m = m.max(l.data.iter().copied().max().unwrap_or(0));
    }
    Ok((m as usize).max(1))
}

pub fn run(a: ScoreArgs) -> Result<Outcome> {
    let (rows, out) = match (&a.pred_dir, &a.gt_dir, &a.pairs) {
        (Some(p), Some(g), None) => (rows_from_dirs(p, g)?, p.join("score")),
        (None, None, Some(csv)) => {
            let base = csv.parent().map(Path::to_path_buf).unwrap_or_default();
            (rows_from_csv(csv)?, base.join("score"))
        }
        _ => return Err(Error::Config("give either --pred-dir and --gt-dir, or --pairs".into())),
    };
    let out = a.out.clone().unwrap_or(out);
    let manifest = match &a.gt_dir {
        Some(g) if g.join(MANIFEST_FILE).exists() => Some(DatasetManifest::open(g)?),
        _ => None,
    };
    let num_classes = match (a.classes, &manifest) {
        (Some(n), _) => n,
        (None, Some(m)) => m.num_classes,
        (None, None) => max_label(&rows)?,
    };
    let class_names = match &manifest {
        Some(m) if m.num_classes == num_classes => m.class_names.clone(),
        _ => (1..=num_classes).map(|c| format!("c{c}")).collect(),
    };
    let eff = ScoreConfig {
        num_classes,
        class_names: class_names.clone(),
        pred_dir: a.pred_dir.clone(),
        gt_dir: a.gt_dir.clone(),
        pairs: a.pairs.clone(),
        samples: rows.len(),
    };
    let report = score_rows(&rows, num_classes)?;
    write_effective(&out, &eff)?;
    let table = report.text_table(&class_names);
    let warning = report.imbalance_warning();
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("report.json", &report.to_json())?;
    write("sek_grid.csv", &report.grid_csv(&class_names)?)?;
    let mut text = table.clone();
    if let Some(w) = &warning {
        text.push_str(w);
        text.push('\n');
    }
    write("report.txt", &text)?;
    print!("{table}");
    if let Some(w) = warning {
        println!("{w}");
    }
    Ok(Outcome::Ok)
}
