//! Per-pixel reference scoring that never builds a confusion matrix.

use rand::Rng;
use scd::metrics::PairMap;

#[derive(Debug, Clone, Copy)]
pub struct Scores {
    pub oa: f64,
    pub kappa: f64,
    pub iou1: f64,
    pub iou2: f64,
    pub miou: f64,
    pub sek: f64,
}

fn kappa_like(rho: f64, eta: f64) -> f64 {
    if 1.0 - eta < 1e-12 {
        if rho >= 1.0 - 1e-12 { 1.0 } else { 0.0 }
    } else {
        (rho - eta) / (1.0 - eta)
    }
}

fn is_change(p: (u8, u8)) -> bool {
    p != (0, 0)
}

pub fn score(pred: &PairMap, gt: &PairMap) -> Scores {
    let px: Vec<((u8, u8), (u8, u8))> = pred.pairs.iter().copied().zip(gt.pairs.iter().copied()).collect();
    let n = px.len() as f64;
    let mut types: Vec<(u8, u8)> = px.iter().flat_map(|&(a, b)| [a, b]).collect();
    types.sort_unstable();
    types.dedup();

    let agree = px.iter().filter(|(a, b)| a == b).count() as f64;
    let oa = agree / n;
    let mut eta = 0.0;
    for &t in &types {
        let rp = px.iter().filter(|(a, _)| *a == t).count() as f64;
        let cg = px.iter().filter(|(_, b)| *b == t).count() as f64;
        eta += rp * cg;
    }
    let kappa = kappa_like(oa, eta / (n * n));

    let both_unchanged = px.iter().filter(|(a, b)| !is_change(*a) && !is_change(*b)).count() as f64;
    let any_unchanged = px.iter().filter(|(a, b)| !is_change(*a) || !is_change(*b)).count() as f64;
    let iou1 = if any_unchanged == 0.0 { 1.0 } else { both_unchanged / any_unchanged };
    let both_changed = px.iter().filter(|(a, b)| is_change(*a) && is_change(*b)).count() as f64;
    let any_changed = px.iter().filter(|(a, b)| is_change(*a) || is_change(*b)).count() as f64;
    let iou2 = if any_changed == 0.0 { 1.0 } else { both_changed / any_changed };

    let sek = if any_changed == 0.0 {
        1.0
    } else {
        // only pixels where something changed take part
        let active: Vec<_> = px.iter().filter(|(a, b)| is_change(*a) || is_change(*b)).collect();
        let m = active.len() as f64;
        let rho = active.iter().filter(|(a, b)| a == b).count() as f64 / m;
        let mut eta = 0.0;
        for &t in &types {
            let rp = active.iter().filter(|(a, _)| *a == t).count() as f64;
            let cg = active.iter().filter(|(_, b)| *b == t).count() as f64;
            eta += rp * cg;
        }
        (iou2 - 1.0).exp() * kappa_like(rho, eta / (m * m))
    };
    Scores { oa, kappa, iou1, iou2, miou: 0.5 * (iou1 + iou2), sek }
}

/// Random pair map with a given chance of change per pixel; labels in 1..=n.
pub fn random_map<R: Rng>(rng: &mut R, h: usize, w: usize, n: u8, p_change: f64) -> PairMap {
    let pairs = (0..h * w)
        .map(|_| {
            if rng.random_bool(p_change) {
                (rng.random_range(1..=n), rng.random_range(1..=n))
            } else {
                (0, 0)
            }
        })
        .collect();
    PairMap::new(h, w, pairs).expect("extent")
}

/// A prediction that agrees with `gt` on roughly `keep` of the pixels.
pub fn noisy_copy<R: Rng>(rng: &mut R, gt: &PairMap, n: u8, keep: f64) -> PairMap {
    let mut out = gt.clone();
    for p in &mut out.pairs {
        if !rng.random_bool(keep) {
            *p = if rng.random_bool(0.5) {
                (0, 0)
            } else {
                (rng.random_range(1..=n), rng.random_range(1..=n))
            };
        }
    }
    out
}
