//! Ground truth, the joint loss, prediction rules and test-time augmentation.

use super::Asn;
use crate::dataset::SampleRecord;
use crate::metrics::PairMap;
use crate::tensor::{resize_values, softmax_values, Tape, Tensor, Var};
use crate::{Error, Result};

/// Blackened label maps and the binary change map of a batch, row-major `[n, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub label1: Vec<u8>,
    pub label2: Vec<u8>,
    pub change: Vec<u8>,
}

impl GroundTruth {
    pub fn from_records(records: &[SampleRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Dimension("empty batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut gt = Self {
            n: records.len(),
            height: h,
            width: w,
            label1: Vec::new(),
            label2: Vec::new(),
            change: Vec::new(),
        };
        for r in records {
            if (r.height, r.width) != (h, w) {
                return Err(Error::Dimension(format!("sample {} is {}x{}, batch is {h}x{w}", r.id, r.height, r.width)));
            }
            gt.label1.extend(&r.label1);
            gt.label2.extend(&r.label2);
            gt.change.extend(&r.change_mask);
        }
        Ok(gt)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let len = self.n * self.height * self.width;
        if self.label1.len() != len || self.label2.len() != len || self.change.len() != len {
            return Err(Error::Dimension("ground truth buffers do not match their extent".into()));
        }
        if let Some(&l) = self.label1.iter().chain(&self.label2).find(|&&l| l as usize > num_classes) {
            return Err(Error::Label(format!("label {l} exceeds {num_classes} classes")));
        }
        if let Some(&m) = self.change.iter().find(|&&m| m > 1) {
            return Err(Error::Label(format!("change value {m} is not binary")));
        }
        for ((&a, &b), &c) in self.label1.iter().zip(&self.label2).zip(&self.change) {
            if (a != 0) != (c == 1) || (b != 0) != (c == 1) {
                return Err(Error::AnnotationConsistency { count: 1, path: None });
            }
        }
        Ok(())
    }
}

/// Per-class cross-entropy weights; `None` entries mean unweighted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassWeights {
    pub semantic: Option<Vec<f64>>,
    pub change: Option<Vec<f64>>,
}

pub(crate) struct LossVars {
    pub total: Var,
    pub e1: Var,
    pub e2: Var,
    pub ec: Var,
}

fn as_usize(v: &[u8]) -> Vec<usize> {
    v.iter().map(|&x| x as usize).collect()
}

pub(crate) fn loss_vars(
    t: &mut Tape,
    (m1, m2, c): (Var, Var, Var),
    gt: &GroundTruth,
    alpha: f64,
    beta: f64,
    weights: &ClassWeights,
) -> Result<LossVars> {
    let k = t.shape(m1)[1];
    gt.validate(k - 1)?;
    let sw = weights.semantic.as_deref();
    let e1 = t.cross_entropy(m1, &as_usize(&gt.label1), sw, None)?;
    let e2 = t.cross_entropy(m2, &as_usize(&gt.label2), sw, None)?;
    let ec = t.cross_entropy(c, &as_usize(&gt.change), weights.change.as_deref(), None)?;
    let a = t.scale(e1, alpha);
    let b = t.scale(e2, beta);
    let ab = t.add(a, b)?;
    let total = t.add(ab, ec)?;
    Ok(LossVars { total, e1, e2, ec })
}

/// `alpha * E(m1) + beta * E(m2) + E(c)` with unweighted cross-entropy.
pub fn loss(m1_raw: &Tensor, m2_raw: &Tensor, c_raw: &Tensor, gt: &GroundTruth, alpha: f64, beta: f64) -> Result<f64> {
    let mut t = Tape::inference();
    let m = (t.constant(m1_raw.clone()), t.constant(m2_raw.clone()), t.constant(c_raw.clone()));
    let l = loss_vars(&mut t, m, gt, alpha, beta, &ClassWeights::default())?;
    Ok(t.value(l.total).data()[0])
}

/// A per-pixel change-type map plus the probabilities it was composed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticChangePrediction {
    pub pairs: PairMap,
    /// `H * W` probability of change.
    pub change_prob: Vec<f64>,
    /// Two `[N+1, H, W]` probability maps.
    pub sem_probs: [Tensor; 2],
}

impl SemanticChangePrediction {
    /// Pairs with a blank on exactly one side (possible only from the
    /// intuitive rule) are scored as non-change.
    pub fn scoring_pairs(&self) -> PairMap {
        let pairs = self
            .pairs
            .pairs
            .iter()
            .map(|&(a, b)| if a == 0 || b == 0 { (0, 0) } else { (a, b) })
            .collect();
        PairMap {
            height: self.pairs.height,
            width: self.pairs.width,
            pairs,
        }
    }
}

fn prob_dims(m: &Tensor) -> Result<(usize, usize, usize)> {
    match m.shape() {
        [k, h, w] => Ok((*k, *h, *w)),
        [1, k, h, w] => Ok((*k, *h, *w)),
        s => Err(Error::Dimension(format!("probability map must be [K, H, W], got {s:?}"))),
    }
}

fn argmax_from(m: &[f64], k: usize, plane: usize, p: usize, from: usize) -> u8 {
    let mut best = from;
    for c in from + 1..k {
        if m[c * plane + p] > m[best * plane + p] {
            best = c;
        }
    }
    best as u8
}

/// Pixels below `tau` are non-change; elsewhere each date takes its best
/// non-blank class.
pub fn compose_prediction(m1: &Tensor, m2: &Tensor, change_prob: &[f64], tau: f64) -> Result<SemanticChangePrediction> {
    let (k, h, w) = prob_dims(m1)?;
    if prob_dims(m2)? != (k, h, w) || change_prob.len() != h * w {
        return Err(Error::Dimension("probability maps disagree in shape".into()));
    }
    if k < 2 {
        return Err(Error::Dimension("semantic maps need a blank and at least one class".into()));
    }
    let plane = h * w;
    let pairs = (0..plane)
        .map(|p| {
            if change_prob[p] < tau {
                (0, 0)
            } else {
                (argmax_from(m1.data(), k, plane, p, 1), argmax_from(m2.data(), k, plane, p, 1))
            }
        })
        .collect();
    Ok(SemanticChangePrediction {
        pairs: PairMap::new(h, w, pairs)?,
        change_prob: change_prob.to_vec(),
        sem_probs: [m1.clone(), m2.clone()],
    })
}

/// Independent per-date argmax over all classes (blank included); equal
/// labels mean non-change.
pub fn intuitive_baseline(m1: &Tensor, m2: &Tensor) -> Result<SemanticChangePrediction> {
    let (k, h, w) = prob_dims(m1)?;
    if prob_dims(m2)? != (k, h, w) {
        return Err(Error::Dimension("probability maps disagree in shape".into()));
    }
    let plane = h * w;
    let mut pairs = Vec::with_capacity(plane);
    let mut change = Vec::with_capacity(plane);
    for p in 0..plane {
        let a = argmax_from(m1.data(), k, plane, p, 0);
        let b = argmax_from(m2.data(), k, plane, p, 0);
        if a == b {
            pairs.push((0, 0));
            change.push(0.0);
        } else {
            pairs.push((a, b));
            change.push(1.0);
        }
    }
    Ok(SemanticChangePrediction {
        pairs: PairMap::new(h, w, pairs)?,
        change_prob: change,
        sem_probs: [m1.clone(), m2.clone()],
    })
}

/// Averaged per-sample probabilities: two `[n, N+1, H, W]` maps and `[n, H, W]` change.
struct Probs {
    m1: Tensor,
    m2: Tensor,
    change: Tensor,
}

impl Asn {
    /// Softmax probabilities of one batch at its native extent.
    fn probabilities(&self, i1: &Tensor, i2: &Tensor, use_atl: bool) -> Result<Probs> {
        let out = self.forward(i1, i2)?;
        let (m1, m2, c) = if use_atl {
            self.atl_forward(&out.m1_raw, &out.m2_raw, &out.c_raw)?
        } else {
            (out.m1_raw, out.m2_raw, out.c_raw)
        };
        Ok(Probs {
            m1: softmax_values(&m1, 1),
            m2: softmax_values(&m2, 1),
            change: channel(&softmax_values(&c, 1), 1),
        })
    }

    /// Plain prediction of a batch `[n, d, H, W]`.
    pub fn predict(&self, i1: &Tensor, i2: &Tensor, use_atl: bool) -> Result<Vec<SemanticChangePrediction>> {
        self.tta_predict(i1, i2, &[1.0], false, use_atl)
    }

    /// Multi-scale (and optionally flipped) prediction, averaging probabilities
    /// at native resolution before composing once.
    pub fn tta_predict(
        &self,
        i1: &Tensor,
        i2: &Tensor,
        scales: &[f64],
        use_flip: bool,
        use_atl: bool,
    ) -> Result<Vec<SemanticChangePrediction>> {
        if scales.is_empty() {
            return Err(Error::Config("test-time augmentation needs at least one scale".into()));
        }
        if let Some(s) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("invalid scale {s}")));
        }
        if i1.shape() != i2.shape() {
            return Err(Error::Dimension(format!("image shapes {:?} and {:?} differ", i1.shape(), i2.shape())));
        }
        let (n, _, h, w) = i1.dims4()?;
        let flips: &[bool] = if use_flip { &[false, true] } else { &[false] };
        let mut acc: Option<Probs> = None;
        let mut count = 0.0;
        for &s in scales {
            for &flip in flips {
                let p = self.augmented(i1, i2, s, flip, use_atl)?;
                count += 1.0;
                acc = Some(match acc {
                    None => p,
                    Some(a) => Probs {
                        m1: add(&a.m1, &p.m1),
                        m2: add(&a.m2, &p.m2),
                        change: add(&a.change, &p.change),
                    },
                });
            }
        }
        let mut a = acc.expect("at least one augmentation");
        if count > 1.0 {
            for t in [&mut a.m1, &mut a.m2, &mut a.change] {
                t.data_mut().iter_mut().for_each(|v| *v /= count);
            }
        }
        let k = a.m1.shape()[1];
        (0..n)
            .map(|i| {
                let m1 = a.m1.sample(i).reshape(&[k, h, w])?;
                let m2 = a.m2.sample(i).reshape(&[k, h, w])?;
                let cp = &a.change.data()[i * h * w..(i + 1) * h * w];
                compose_prediction(&m1, &m2, cp, self.config.tau)
            })
            .collect()
    }

    fn augmented(&self, i1: &Tensor, i2: &Tensor, scale: f64, flip: bool, use_atl: bool) -> Result<Probs> {
        let (_, _, h, w) = i1.dims4()?;
        let hs = ((h as f64 * scale).round() as usize).max(1);
        let ws = ((w as f64 * scale).round() as usize).max(1);
        let sp = self.config.stride_product();
        let (hp, wp) = (hs.div_ceil(sp) * sp, ws.div_ceil(sp) * sp);
        let prep = |x: &Tensor| {
            let x = if (hs, ws) == (h, w) { x.clone() } else { resize_values(x, hs, ws) };
            let x = if flip { x.flip_horizontal() } else { x };
            pad(&x, hp, wp)
        };
        let p = self.probabilities(&prep(i1), &prep(i2), use_atl)?;
        let post = |x: &Tensor| {
            let x = crop(x, hs, ws);
            let x = if flip { x.flip_horizontal() } else { x };
            if (hs, ws) == (h, w) {
                x
            } else {
                resize_values(&x, h, w)
            }
        };
        let change = {
            let (n, hh, ww) = (p.change.shape()[0], p.change.shape()[1], p.change.shape()[2]);
            let c4 = p.change.reshape(&[n, 1, hh, ww])?;
            post(&c4).reshape(&[n, h, w])?
        };
        Ok(Probs {
            m1: post(&p.m1),
            m2: post(&p.m2),
            change,
        })
    }
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Channel `c` of `[n, C, H, W]` as `[n, H, W]`.
fn channel(x: &Tensor, c: usize) -> Tensor {
    let (n, cs, h, w) = x.dims4().expect("rank 4");
    let plane = h * w;
    let mut data = Vec::with_capacity(n * plane);
    for s in 0..n {
        let off = (s * cs + c) * plane;
        data.extend_from_slice(&x.data()[off..off + plane]);
    }
    Tensor::new(&[n, h, w], data).expect("extent")
}

/// Zero-pad `[n, c, h, w]` at the bottom and right.
fn pad(x: &Tensor, hp: usize, wp: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().expect("rank 4");
    if (h, w) == (hp, wp) {
        return x.clone();
    }
    let mut out = Tensor::zeros(&[n, c, hp, wp]);
    let d = out.data_mut();
    for p in 0..n * c {
        for y in 0..h {
            let src = &x.data()[(p * h + y) * w..(p * h + y + 1) * w];
            d[(p * hp + y) * wp..(p * hp + y) * wp + w].copy_from_slice(src);
        }
    }
    out
}

fn crop(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c, hp, wp) = x.dims4().expect("rank 4");
    if (h, w) == (hp, wp) {
        return x.clone();
    }
    let mut data = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        for y in 0..h {
            data.extend_from_slice(&x.data()[(p * hp + y) * wp..(p * hp + y) * wp + w]);
        }
    }
    Tensor::new(&[n, c, h, w], data).expect("extent")
}
