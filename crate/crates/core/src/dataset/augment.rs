//! Joint geometric augmentation of both images and both label maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SampleRecord;
use crate::tensor::{resize_values, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Output extent after crop or zero padding.
    pub crop: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip: true, scale_min: 0.5, scale_max: 2.0, crop: 64 }
    }
}

/// Random flip (p = 0.5) and random scale, then crop/pad to `config.crop`.
pub fn augment<R: Rng>(record: &SampleRecord, config: &AugmentConfig, rng: &mut R) -> SampleRecord {
    let flip = config.flip && rng.random_bool(0.5);
    let scale = if config.scale_max > config.scale_min {
        rng.random_range(config.scale_min..=config.scale_max)
    } else {
        config.scale_min
    };
    let h = ((record.height as f64 * scale).round() as usize).max(1);
    let w = ((record.width as f64 * scale).round() as usize).max(1);
    let c = config.crop;
    let oy = offset(rng, h, c);
    let ox = offset(rng, w, c);
    transform(record, flip, (h, w), (oy, ox), c)
}

/// Shift between the scaled raster and the crop window: positive means the
/// crop starts inside the raster, negative means the raster sits inside padding.
fn offset<R: Rng>(rng: &mut R, len: usize, crop: usize) -> isize {
    if len >= crop {
        rng.random_range(0..=len - crop) as isize
    } else {
        -(rng.random_range(0..=crop - len) as isize)
    }
}

/// Deterministic core: flip, resize to `size`, then window `crop x crop` at `offset`.
pub(crate) fn transform(
    record: &SampleRecord,
    flip: bool,
    size: (usize, usize),
    offset: (isize, isize),
    crop: usize,
) -> SampleRecord {
    let mut r = record.clone();
    if flip {
        r = flip_record(&r);
    }
    let (h, w) = size;
    let (sh, sw, ch) = (r.height, r.width, r.channels);
    let resize_image = |img: &[f64]| {
        let chw = hwc_to_chw(img, sh, sw, ch);
        let t = Tensor::new(&[1, ch, sh, sw], chw).expect("record extent");
        let out = resize_values(&t, h, w);
        let mut v = chw_to_hwc(out.data(), h, w, ch);
        v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        v
    };
    let (img1, img2) = (resize_image(&r.image1), resize_image(&r.image2));
    // nearest neighbour with the same half-pixel convention as the bilinear resize
    let src = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
    let resize_label = |l: &[u8]| {
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = l[src(y, h, sh) * sw + src(x, w, sw)];
            }
        }
        out
    };
    let (lab1, lab2) = (resize_label(&r.label1), resize_label(&r.label2));

    let mut out = SampleRecord {
        id: r.id.clone(),
        height: crop,
        width: crop,
        channels: ch,
        image1: vec![0.0; crop * crop * ch],
        image2: vec![0.0; crop * crop * ch],
        label1: vec![0; crop * crop],
        label2: vec![0; crop * crop],
        change_mask: vec![0; crop * crop],
    };
    for y in 0..crop {
        let sy = y as isize + offset.0;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..crop {
            let sx = x as isize + offset.1;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let (s, d) = (sy as usize * w + sx as usize, y * crop + x);
            out.image1[d * ch..(d + 1) * ch].copy_from_slice(&img1[s * ch..(s + 1) * ch]);
            out.image2[d * ch..(d + 1) * ch].copy_from_slice(&img2[s * ch..(s + 1) * ch]);
            out.label1[d] = lab1[s];
            out.label2[d] = lab2[s];
            out.change_mask[d] = u8::from(lab1[s] != 0);
        }
    }
    out
}

pub(crate) fn flip_record(r: &SampleRecord) -> SampleRecord {
    let (h, w, c) = (r.height, r.width, r.channels);
    let flip_px = |v: &[f64]| {
        let mut out = Vec::with_capacity(v.len());
        for y in 0..h {
            for x in (0..w).rev() {
                out.extend_from_slice(&v[(y * w + x) * c..(y * w + x + 1) * c]);
            }
        }
        out
    };
    let flip_lab = |v: &[u8]| {
        let mut out = Vec::with_capacity(v.len());
        for row in v.chunks(w) {
            out.extend(row.iter().rev());
        }
        out
    };
    SampleRecord {
        id: r.id.clone(),
        height: h,
        width: w,
        channels: c,
        image1: flip_px(&r.image1),
        image2: flip_px(&r.image2),
        label1: flip_lab(&r.label1),
        label2: flip_lab(&r.label2),
        change_mask: flip_lab(&r.change_mask),
    }
}

fn hwc_to_chw(v: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for p in 0..h * w {
        for ch in 0..c {
            out[ch * h * w + p] = v[p * c + ch];
        }
    }
    out
}

fn chw_to_hwc(v: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for p in 0..h * w {
        for ch in 0..c {
            out[p * c + ch] = v[ch * h * w + p];
        }
    }
    out
}
