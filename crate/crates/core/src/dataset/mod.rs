//! Bitemporal samples in the blackened-label layout.
//!
//! A dataset root holds `im1/`, `im2/`, `label1/` and `label2/`, one PNG per
//! sample id in each, plus `manifest.json`. Label maps are single-channel class
//! ids where 0 marks unchanged pixels; the change mask is derived from them.

mod augment;
pub mod png_io;
mod synth;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig};
pub use png_io::Raster;
pub use synth::{synth_generate, write_dataset, Profile, SynthConfig, SynthStats};

use crate::metrics::PairMap;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `H x W x channels`, values in `[0, 1]`.
    pub image1: Vec<f64>,
    pub image2: Vec<f64>,
    pub label1: Vec<u8>,
    pub label2: Vec<u8>,
    pub change_mask: Vec<u8>,
}

fn inconsistent_pixels(label1: &[u8], label2: &[u8]) -> usize {
    label1.iter().zip(label2).filter(|(a, b)| (**a == 0) != (**b == 0)).count()
}

impl SampleRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        height: usize,
        width: usize,
        channels: usize,
        image1: Vec<f64>,
        image2: Vec<f64>,
        label1: Vec<u8>,
        label2: Vec<u8>,
    ) -> Result<Self> {
        let change_mask = label1.iter().map(|&l| u8::from(l != 0)).collect();
        let r = Self { id: id.into(), height, width, channels, image1, image2, label1, label2, change_mask };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let px = self.height * self.width;
        if px == 0 || self.channels == 0 {
            return Err(Error::Format(format!("{}: empty extent", self.id)));
        }
        for (what, len, want) in [
            ("image1", self.image1.len(), px * self.channels),
            ("image2", self.image2.len(), px * self.channels),
            ("label1", self.label1.len(), px),
            ("label2", self.label2.len(), px),
            ("change_mask", self.change_mask.len(), px),
        ] {
            if len != want {
                return Err(Error::Format(format!("{}: {what} has {len} values, expected {want}", self.id)));
            }
        }
        if let Some(v) = self.image1.iter().chain(&self.image2).find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("{}: image value {v} outside [0,1]", self.id)));
        }
        let bad = inconsistent_pixels(&self.label1, &self.label2);
        if bad > 0 {
            return Err(Error::AnnotationConsistency { count: bad, path: None });
        }
        if self.change_mask.iter().zip(&self.label1).any(|(&m, &l)| m != u8::from(l != 0)) {
            return Err(Error::Format(format!("{}: change mask disagrees with labels", self.id)));
        }
        Ok(())
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.label1.iter().chain(&self.label2).find(|&&l| l as usize > num_classes) {
            Some(l) => Err(Error::Label(format!("{}: label {l} exceeds {num_classes} classes", self.id))),
            None => Ok(()),
        }
    }

    /// Image `t` (1 or 2) as a `[1, C, H, W]` tensor.
    pub fn image_tensor(&self, t: usize) -> Tensor {
        let img = if t == 1 { &self.image1 } else { &self.image2 };
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; img.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[ch * h * w + y * w + x] = img[(y * w + x) * c + ch];
                }
            }
        }
        Tensor::new(&[1, c, h, w], data).expect("record extent is valid")
    }

    pub fn pairs(&self) -> PairMap {
        PairMap::from_labels(self.height, self.width, &self.label1, &self.label2).expect("record extent is valid")
    }

    pub fn changed_pixels(&self) -> usize {
        self.change_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// File locations of the four co-registered rasters of one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePaths {
    pub im1: PathBuf,
    pub im2: PathBuf,
    pub label1: PathBuf,
    pub label2: PathBuf,
}

impl SamplePaths {
    pub fn in_root(root: &Path, id: &str) -> Self {
        let file = format!("{id}.png");
        Self {
            im1: root.join("im1").join(&file),
            im2: root.join("im2").join(&file),
            label1: root.join("label1").join(&file),
            label2: root.join("label2").join(&file),
        }
    }

    fn all(&self) -> [&PathBuf; 4] {
        [&self.im1, &self.im2, &self.label1, &self.label2]
    }
}

pub fn load_sample(paths: &SamplePaths, id: &str) -> Result<SampleRecord> {
    let im1 = png_io::read_rgb(&paths.im1)?;
    let im2 = png_io::read_rgb(&paths.im2)?;
    let l1 = png_io::read_gray(&paths.label1)?;
    let l2 = png_io::read_gray(&paths.label2)?;
    let extent = (im1.height, im1.width);
    for (p, r) in [(&paths.im2, &im2), (&paths.label1, &l1), (&paths.label2, &l2)] {
        if (r.height, r.width) != extent {
            return Err(Error::Format(format!(
                "{}: extent {}x{} differs from {}x{} of {}",
                p.display(),
                r.height,
                r.width,
                extent.0,
                extent.1,
                paths.im1.display()
            )));
        }
    }
    let bad = inconsistent_pixels(&l1.data, &l2.data);
    if bad > 0 {
        return Err(Error::AnnotationConsistency { count: bad, path: Some(paths.label1.clone()) });
    }
    let to_unit = |r: Raster| r.data.into_iter().map(|v| v as f64 / 255.0).collect();
    SampleRecord::new(id, extent.0, extent.1, 3, to_unit(im1), to_unit(im2), l1.data, l2.data)
}

pub fn load_from_root(root: &Path, id: &str) -> Result<SampleRecord> {
    load_sample(&SamplePaths::in_root(root, id), id)
}

/// Quantize an image channel to 8 bits. Values already on the k/255 grid
/// survive a save/load round trip exactly.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_sample(record: &SampleRecord, root: &Path, overwrite: bool) -> Result<SamplePaths> {
    save_sample_with(record, root, overwrite, None)
}

pub fn save_sample_with(
    record: &SampleRecord,
    root: &Path,
    overwrite: bool,
    palette: Option<&LabelPalette>,
) -> Result<SamplePaths> {
    record.validate()?;
    if record.channels != 3 {
        return Err(Error::Format(format!("{}: only 3-channel images are stored", record.id)));
    }
    let paths = SamplePaths::in_root(root, &record.id);
    let preview_path = root.join("preview").join(format!("{}.png", record.id));
    if !overwrite {
        let mut targets: Vec<&PathBuf> = paths.all().to_vec();
        if palette.is_some() {
            targets.push(&preview_path);
        }
        if let Some(p) = targets.into_iter().find(|p| p.exists()) {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "refusing to overwrite without force"),
            ));
        }
    }
    let (h, w) = (record.height, record.width);
    let rgb = |img: &[f64]| Raster { width: w, height: h, channels: 3, data: img.iter().map(|&v| quantize(v)).collect() };
    let gray = |l: &[u8]| Raster { width: w, height: h, channels: 1, data: l.to_vec() };
    png_io::write(&paths.im1, &rgb(&record.image1))?;
    png_io::write(&paths.im2, &rgb(&record.image2))?;
    png_io::write(&paths.label1, &gray(&record.label1))?;
    png_io::write(&paths.label2, &gray(&record.label2))?;
    if let Some(pal) = palette {
        png_io::write(&preview_path, &pal.side_by_side(h, w, &record.label1, &record.label2))?;
    }
    Ok(paths)
}

/// Class id to display colour. Id 0 (non-change) is white.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPalette {
    pub names: Vec<String>,
    pub colors: Vec<[u8; 3]>,
}

const SECOND_CLASSES: [(&str, [u8; 3]); 6] = [
    ("water", [0, 0, 255]),
    ("nvg_surface", [128, 128, 128]),
    ("low_vegetation", [0, 128, 0]),
    ("tree", [0, 255, 0]),
    ("building", [128, 0, 0]),
    ("playground", [255, 0, 0]),
];

const EXTRA_COLORS: [[u8; 3]; 6] = [
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [255, 128, 0],
    [128, 0, 255],
    [0, 128, 128],
];

impl LabelPalette {
    /// Index 0 must be the non-change entry and colours must be distinct.
    pub fn new(names: Vec<String>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if names.len() != colors.len() || names.is_empty() {
            return Err(Error::Config("palette needs one colour per name, non-change first".into()));
        }
        let distinct: HashSet<_> = colors.iter().collect();
        if distinct.len() != colors.len() {
            return Err(Error::Config("palette colours must be distinct".into()));
        }
        Ok(Self { names, colors })
    }

    /// The six SECOND land-cover classes.
    pub fn second() -> Self {
        Self::with_classes(&SECOND_CLASSES.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>())
            .expect("builtin palette is valid")
    }

    /// Palette for arbitrary class names: SECOND colours first, then extras.
    pub fn with_classes(class_names: &[String]) -> Result<Self> {
        let pool: Vec<[u8; 3]> = SECOND_CLASSES.iter().map(|(_, c)| *c).chain(EXTRA_COLORS).collect();
        if class_names.len() > pool.len() {
            return Err(Error::Config(format!("at most {} classes have built-in colours", pool.len())));
        }
        let mut names = vec!["non_change".to_string()];
        names.extend(class_names.iter().cloned());
        let mut colors = vec![[255, 255, 255]];
        colors.extend(&pool[..class_names.len()]);
        Self::new(names, colors)
    }

    pub fn color(&self, id: u8) -> [u8; 3] {
        self.colors.get(id as usize).copied().unwrap_or([0, 0, 0])
    }

    pub fn render(&self, height: usize, width: usize, labels: &[u8]) -> Raster {
        Raster {
            width,
            height,
            channels: 3,
            data: labels.iter().flat_map(|&l| self.color(l)).collect(),
        }
    }

    pub fn side_by_side(&self, height: usize, width: usize, a: &[u8], b: &[u8]) -> Raster {
        let gap = 2;
        let total = 2 * width + gap;
        let mut data = vec![0; height * total * 3];
        for y in 0..height {
            for x in 0..width {
                let o1 = (y * total + x) * 3;
                let o2 = (y * total + width + gap + x) * 3;
                data[o1..o1 + 3].copy_from_slice(&self.color(a[y * width + x]));
                data[o2..o2 + 3].copy_from_slice(&self.color(b[y * width + x]));
            }
        }
        Raster { width: total, height, channels: 3, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, class_names: Vec<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { version: 1, num_classes: class_names.len(), class_names, entries, root: root.into() };
        m.check_structure()?;
        Ok(m)
    }

    fn check_structure(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes != self.class_names.len() {
            return Err(Error::Config(format!(
                "num_classes {} but {} class names",
                self.num_classes,
                self.class_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Config(format!("sample id {} listed more than once", e.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_structure()?;
        Ok(m)
    }

    /// Load `manifest.json` from a dataset root.
    pub fn open(root: &Path) -> Result<Self> {
        Self::load(&root.join(MANIFEST_FILE))
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.id.as_str()).collect()
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<SampleRecord>> {
        self.ids(split)
            .into_iter()
            .map(|id| {
                let r = load_from_root(&self.root, id)?;
                r.check_classes(self.num_classes)?;
                Ok(r)
            })
            .collect()
    }

    /// Check every referenced sample on disk.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        for e in &self.entries {
            load_from_root(&self.root, &e.id)?.check_classes(self.num_classes)?;
        }
        Ok(())
    }
}

/// Deterministic shuffled split; `round(ratio * n)` entries become training samples.
pub fn split_manifest(
    root: impl Into<PathBuf>,
    ids: &[String],
    ratio: f64,
    seed: u64,
    class_names: Vec<String>,
) -> Result<DatasetManifest> {
    if ids.is_empty() {
        return Err(Error::Config("cannot split an empty entry list".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie strictly between 0 and 1, got {ratio}")));
    }
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Test; ids.len()];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    let entries = ids
        .iter()
        .zip(split)
        .map(|(id, split)| ManifestEntry { id: id.clone(), split })
        .collect();
    DatasetManifest::new(root, class_names, entries)
}

/// Pixel counts of labels `0..=num_classes` over both label maps of `records`.
pub fn histogram<'a>(records: impl IntoIterator<Item = &'a SampleRecord>, num_classes: usize) -> Vec<u64> {
    let mut h = vec![0u64; num_classes + 1];
    for r in records {
        for &l in r.label1.iter().chain(&r.label2) {
            if let Some(c) = h.get_mut(l as usize) {
                *c += 1;
            }
        }
    }
    h
}

pub fn class_histogram(manifest: &DatasetManifest, split: Split) -> Result<Vec<u64>> {
    let records = manifest.load_split(split)?;
    Ok(histogram(&records, manifest.num_classes))
}

/// Inverse-log-frequency weights `1 / ln(1.2 + p_c)`, rescaled to mean 1.
pub fn categorical_weights(histogram: &[u64]) -> Vec<f64> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return vec![1.0; histogram.len()];
    }
    let raw: Vec<f64> = histogram
        .iter()
        .map(|&c| 1.0 / (1.2 + c as f64 / total as f64).ln())
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

#[cfg(test)]
mod tests;
