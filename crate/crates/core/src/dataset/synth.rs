//! Seeded synthetic bitemporal scenes.
//!
//! Each scene starts from a land-cover layout of textured regions shared by
//! both dates. Change regions are then painted into the second date until the
//! changed-pixel fraction reaches its target. Three kinds of change occur:
//! ordinary class transitions, same-class rebuilds (new texture, same label)
//! and mixed regions where one date shows two interleaved classes.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{quantize, save_sample_with, split_manifest, DatasetManifest, LabelPalette, SampleRecord};
use crate::metrics::ChangeTypeIndex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Ordinary transitions and rebuilds only.
    Symmetric,
    #[default]
    Balanced,
    /// Half of all change regions are mixed-distribution changes.
    Asymmetric,
}

impl Profile {
    fn mixed_share(self) -> f64 {
        match self {
            Profile::Symmetric => 0.0,
            Profile::Balanced => 0.25,
            Profile::Asymmetric => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub profile: Profile,
    /// Target share of changed pixels per scene.
    pub change_fraction: f64,
    /// Share of change regions that keep their class but change texture.
    pub rebuild_share: f64,
    /// Gaussian pixel noise, in units of the [0,1] intensity range.
    pub noise: f64,
    pub texture_amplitude: f64,
    /// Held-out share when writing a manifest.
    pub test_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 250,
            size: 64,
            num_classes: 4,
            class_names: Vec::new(),
            profile: Profile::Balanced,
            change_fraction: 0.2,
            rebuild_share: 0.15,
            noise: 0.03,
            texture_amplitude: 0.08,
            test_ratio: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("synth config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synth config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if self.num_classes < 2 || self.num_classes > 12 {
            return Err(Error::Config(format!("num_classes must be in 2..=12, got {}", self.num_classes)));
        }
        if self.size < 32 {
            return Err(Error::Config(format!("size must be at least 32, got {}", self.size)));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return Err(Error::Config("class_names must list one name per class".into()));
        }
        if !(0.0..0.6).contains(&self.change_fraction) {
            return Err(Error::Config("change_fraction must be in [0, 0.6)".into()));
        }
        if !(0.0..=1.0).contains(&self.rebuild_share) || self.noise < 0.0 || self.texture_amplitude < 0.0 {
            return Err(Error::Config("rebuild_share, noise and texture_amplitude out of range".into()));
        }
        if !(self.test_ratio > 0.0 && self.test_ratio < 1.0) {
            return Err(Error::Config("test_ratio must lie strictly between 0 and 1".into()));
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        if self.class_names.is_empty() {
            (1..=self.num_classes).map(|c| format!("class{c}")).collect()
        } else {
            self.class_names.clone()
        }
    }
}

/// Ground-truth statistics of a generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub samples: usize,
    pub pixels: u64,
    pub changed_pixels: u64,
    pub change_fraction: f64,
    pub transition_regions: usize,
    pub rebuild_regions: usize,
    pub mixed_regions: usize,
    /// Pixel count per change type `"(l1,l2)"`.
    pub change_types: std::collections::BTreeMap<String, u64>,
}

const BASE_COLORS: [[f64; 3]; 12] = [
    [0.20, 0.35, 0.80],
    [0.55, 0.55, 0.55],
    [0.40, 0.70, 0.30],
    [0.10, 0.40, 0.15],
    [0.75, 0.30, 0.25],
    [0.85, 0.75, 0.35],
    [0.60, 0.30, 0.70],
    [0.30, 0.75, 0.75],
    [0.90, 0.55, 0.15],
    [0.35, 0.20, 0.10],
    [0.85, 0.85, 0.90],
    [0.15, 0.15, 0.25],
];

/// Stripe texture of one region: orientation and phase.
#[derive(Debug, Clone, Copy)]
struct Texture {
    angle: f64,
    phase: f64,
}

impl Texture {
    fn random<R: Rng>(rng: &mut R) -> Self {
        Self { angle: rng.random_range(0.0..PI), phase: rng.random_range(0.0..2.0 * PI) }
    }

    /// A texture whose stripes run at least 45 degrees away from `self`.
    fn rotated<R: Rng>(&self, rng: &mut R) -> Self {
        let turn = rng.random_range(PI / 4.0..3.0 * PI / 4.0);
        Self { angle: (self.angle + turn) % PI, phase: rng.random_range(0.0..2.0 * PI) }
    }
}

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, rot: f64 },
    Polygon { verts: Vec<(f64, f64)> },
}

impl Shape {
    fn random<R: Rng>(rng: &mut R, size: usize, rmin: f64, rmax: f64) -> Self {
        let s = size as f64;
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        if rng.random_bool(0.5) {
            Shape::Ellipse {
                cy,
                cx,
                ry: rng.random_range(rmin..rmax),
                rx: rng.random_range(rmin..rmax),
                rot: rng.random_range(0.0..PI),
            }
        } else {
            let k = rng.random_range(5..8);
            let r = rng.random_range(rmin..rmax);
            let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            angles.sort_by(f64::total_cmp);
            let verts = angles
                .into_iter()
                .map(|a| {
                    let rr = r * rng.random_range(0.6..1.0);
                    (cy + rr * a.sin(), cx + rr * a.cos())
                })
                .collect();
            Shape::Polygon { verts }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, ry, rx, rot } => {
                let (dy, dx) = (y - cy, x - cx);
                let (s, c) = rot.sin_cos();
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon { verts } => {
                // vertices sorted by angle form a star-shaped polygon; even-odd rule
                let mut inside = false;
                let n = verts.len();
                for i in 0..n {
                    let (y1, x1) = verts[i];
                    let (y2, x2) = verts[(i + 1) % n];
                    if (y1 > y) != (y2 > y) && x < x1 + (y - y1) * (x2 - x1) / (y2 - y1) {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    fn mask(&self, size: usize) -> Vec<bool> {
        let mut m = vec![false; size * size];
        for y in 0..size {
            for x in 0..size {
                m[y * size + x] = self.contains(y as f64 + 0.5, x as f64 + 0.5);
            }
        }
        m
    }
}

/// Per-pixel land cover at one date: class (1-based) and texture slot.
#[derive(Clone)]
struct Cover {
    class: Vec<u8>,
    texture: Vec<usize>,
}

enum Kind {
    Transition,
    Rebuild,
    Mixed,
}

struct Scene {
    record: SampleRecord,
    kinds: [usize; 3],
}

fn generate_scene(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let n = cfg.num_classes;
    let size = cfg.size;
    let px = size * size;
    let s = size as f64;
    let pick_class = |rng: &mut ChaCha8Rng| rng.random_range(1..=n as u8);

    let mut textures: Vec<Texture> = Vec::new();

    // shared layout: background plus a few land-cover regions
    let bg = push(&mut textures, Texture::random(&mut rng));
    let mut before = Cover { class: vec![pick_class(&mut rng); px], texture: vec![bg; px] };
    for _ in 0..rng.random_range(4..9) {
        let shape = Shape::random(&mut rng, size, s * 0.12, s * 0.3);
        let class = pick_class(&mut rng);
        let tex = push(&mut textures, Texture::random(&mut rng));
        for (p, inside) in shape.mask(size).into_iter().enumerate() {
            if inside {
                before.class[p] = class;
                before.texture[p] = tex;
            }
        }
    }

    let mut after = before.clone();
    let mut changed = vec![false; px];
    let mut n_changed = 0usize;
    let mut kinds = [0usize; 3];
    let target = cfg.change_fraction * px as f64;
    let slack = 0.03 * px as f64;
    let mut failures = 0;
    while (n_changed as f64) < target - slack {
        let shape = Shape::random(&mut rng, size, s * 0.07, s * 0.17);
        let mask = shape.mask(size);
        let added = mask.iter().zip(&changed).filter(|(m, c)| **m && !**c).count();
        if added == 0 || (n_changed + added) as f64 > target + slack {
            failures += 1;
            if failures >= 100 {
                return Err(Error::Generation(format!(
                    "scene {index}: could not place a change region after 100 attempts"
                )));
            }
            continue;
        }
        failures = 0;
        let u: f64 = rng.random();
        let kind = if u < cfg.profile.mixed_share() {
            Kind::Mixed
        } else if u < cfg.profile.mixed_share() + cfg.rebuild_share {
            Kind::Rebuild
        } else {
            Kind::Transition
        };
        match kind {
            Kind::Transition => {
                let inside: Vec<usize> = (0..px).filter(|&p| mask[p]).collect();
                let majority = majority_class(&inside, &before.class, n);
                let mut class = pick_class(&mut rng);
                while class == majority {
                    class = pick_class(&mut rng);
                }
                let tex = push(&mut textures, Texture::random(&mut rng));
                for &p in &inside {
                    after.class[p] = class;
                    after.texture[p] = tex;
                }
                kinds[0] += 1;
            }
            Kind::Rebuild => {
                let inside: Vec<usize> = (0..px).filter(|&p| mask[p]).collect();
                let old = textures[after.texture[inside[0]]];
                let tex = push(&mut textures, old.rotated(&mut rng));
                for &p in &inside {
                    after.texture[p] = tex;
                }
                kinds[1] += 1;
            }
            Kind::Mixed => {
                // one date shows two classes interleaved in blocks
                let a = pick_class(&mut rng);
                let mut b = pick_class(&mut rng);
                while b == a {
                    b = pick_class(&mut rng);
                }
                let period = rng.random_range(3..6);
                let (ta, tb) = (push(&mut textures, Texture::random(&mut rng)), push(&mut textures, Texture::random(&mut rng)));
                let target_cover = if rng.random_bool(0.5) { &mut after } else { &mut before };
                for p in (0..px).filter(|&p| mask[p]) {
                    let (y, x) = (p / size, p % size);
                    let first = ((y / period) + (x / period)) % 2 == 0;
                    target_cover.class[p] = if first { a } else { b };
                    target_cover.texture[p] = if first { ta } else { tb };
                }
                kinds[2] += 1;
            }
        }
        for (c, m) in changed.iter_mut().zip(&mask) {
            if *m && !*c {
                *c = true;
                n_changed += 1;
            }
        }
    }

    let normal = Normal::new(0.0, cfg.noise.max(1e-12)).expect("finite noise");
    let render = |cover: &Cover, rng: &mut ChaCha8Rng| {
        let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
        let mut img = vec![0.0; px * 3];
        for p in 0..px {
            let (y, x) = ((p / size) as f64, (p % size) as f64);
            let class = cover.class[p] as usize;
            let t = textures[cover.texture[p]];
            let freq = 2.0 * PI / (3.0 + class as f64 % 4.0);
            let wave = (freq * (x * t.angle.cos() + y * t.angle.sin()) + t.phase).sin();
            for ch in 0..3 {
                let v = BASE_COLORS[class - 1][ch] + cfg.texture_amplitude * wave + shift[ch];
                let v = if cfg.noise > 0.0 { v + normal.sample(rng) } else { v };
                img[p * 3 + ch] = quantize(v) as f64 / 255.0;
            }
        }
        img
    };
    let image1 = render(&before, &mut rng);
    let image2 = render(&after, &mut rng);
    let label1 = (0..px).map(|p| if changed[p] { before.class[p] } else { 0 }).collect();
    let label2 = (0..px).map(|p| if changed[p] { after.class[p] } else { 0 }).collect();
    let record = SampleRecord::new(format!("{index:05}"), size, size, 3, image1, image2, label1, label2)?;
    Ok(Scene { record, kinds })
}

fn push(textures: &mut Vec<Texture>, t: Texture) -> usize {
    textures.push(t);
    textures.len() - 1
}

fn majority_class(pixels: &[usize], class: &[u8], n: usize) -> u8 {
    let mut counts = vec![0usize; n + 1];
    for &p in pixels {
        counts[class[p] as usize] += 1;
    }
    (1..=n).max_by_key(|&c| counts[c]).unwrap_or(1) as u8
}

/// Generate `cfg.count` validated scenes and their ground-truth statistics.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Vec<SampleRecord>, SynthStats)> {
    cfg.validate()?;
    let index = ChangeTypeIndex::new(cfg.num_classes)?;
    let mut records = Vec::with_capacity(cfg.count);
    let mut kinds = [0usize; 3];
    let mut types = std::collections::BTreeMap::new();
    for i in 0..cfg.count {
        let scene = generate_scene(cfg, i)?;
        for k in 0..3 {
            kinds[k] += scene.kinds[k];
        }
        for (&a, &b) in scene.record.label1.iter().zip(&scene.record.label2) {
            if a != 0 {
                let t = index.pair_to_class(a, b)?;
                let (l1, l2) = index.class_to_pair(t).expect("valid index");
                *types.entry(format!("({l1},{l2})")).or_insert(0u64) += 1;
            }
        }
        records.push(scene.record);
    }
    let pixels = (cfg.count * cfg.size * cfg.size) as u64;
    let changed: u64 = records.iter().map(|r| r.changed_pixels() as u64).sum();
    let stats = SynthStats {
        samples: cfg.count,
        pixels,
        changed_pixels: changed,
        change_fraction: changed as f64 / pixels as f64,
        transition_regions: kinds[0],
        rebuild_regions: kinds[1],
        mixed_regions: kinds[2],
        change_types: types,
    };
    Ok((records, stats))
}

/// Write records, previews, `manifest.json`, `stats.json` and the generator
/// config into `root`.
pub fn write_dataset(
    root: &Path,
    cfg: &SynthConfig,
    records: &[SampleRecord],
    stats: &SynthStats,
    overwrite: bool,
) -> Result<DatasetManifest> {
    let names = cfg.names();
    let palette = LabelPalette::with_classes(&names)?;
    for r in records {
        save_sample_with(r, root, overwrite, Some(&palette))?;
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let manifest = split_manifest(root, &ids, 1.0 - cfg.test_ratio, cfg.seed, names)?;
    manifest.save()?;
    let write = |name: &str, text: String| {
        let p = root.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("stats.json", serde_json::to_string_pretty(stats).expect("stats serialize"))?;
    write("synth.toml", cfg.to_toml())?;
    Ok(manifest)
}
