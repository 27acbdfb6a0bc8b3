//! Change-type confusion matrices and the scoring suite built on them.
//!
//! Rows are predicted change types, columns are true change types, and index 0
//! is non-change. Every metric is a pure function of the counts, so matrices
//! from separate shards can be merged before scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const DEGENERATE: f64 = 1e-12;

/// Per-pixel `(l1, l2)` label pairs; `(0, 0)` is non-change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMap {
    pub height: usize,
    pub width: usize,
    pub pairs: Vec<(u8, u8)>,
}

impl PairMap {
    pub fn new(height: usize, width: usize, pairs: Vec<(u8, u8)>) -> Result<Self> {
        if pairs.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} pairs for a {height}x{width} map",
                pairs.len()
            )));
        }
        Ok(Self { height, width, pairs })
    }

    pub fn from_labels(height: usize, width: usize, l1: &[u8], l2: &[u8]) -> Result<Self> {
        if l1.len() != l2.len() {
            return Err(Error::Dimension("label maps differ in length".into()));
        }
        Self::new(height, width, l1.iter().copied().zip(l2.iter().copied()).collect())
    }

    pub fn unchanged(height: usize, width: usize) -> Self {
        Self { height, width, pairs: vec![(0, 0); height * width] }
    }

    pub fn labels(&self) -> (Vec<u8>, Vec<u8>) {
        self.pairs.iter().copied().unzip()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for row in self.pairs.chunks(self.width) {
            pairs.extend(row.iter().rev());
        }
        Self { height: self.height, width: self.width, pairs }
    }
}

/// Bijection between label pairs and confusion-matrix indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChangeTypeIndex {
    num_classes: usize,
}

impl ChangeTypeIndex {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > 255 {
            return Err(Error::Config(format!("num_classes must be in 1..=255, got {num_classes}")));
        }
        Ok(Self { num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of change types including non-change.
    pub fn size(&self) -> usize {
        self.num_classes * self.num_classes + 1
    }

    pub fn pair_to_class(&self, l1: u8, l2: u8) -> Result<usize> {
        let n = self.num_classes;
        match (l1, l2) {
            (0, 0) => Ok(0),
            (0, _) | (_, 0) => Err(Error::AnnotationConsistency { count: 1, path: None }),
            (a, b) if a as usize > n || b as usize > n => {
                Err(Error::Label(format!("pair ({a},{b}) outside 1..={n}")))
            }
            (a, b) => Ok(1 + (a as usize - 1) * n + (b as usize - 1)),
        }
    }

    pub fn class_to_pair(&self, index: usize) -> Option<(u8, u8)> {
        let n = self.num_classes;
        match index {
            0 => Some((0, 0)),
            i if i < self.size() => Some((((i - 1) / n + 1) as u8, ((i - 1) % n + 1) as u8)),
            _ => None,
        }
    }
}

/// How the non-change entry is removed before computing the chance term of SeK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChanceTerm {
    /// Zero only `q00`; missed and hallucinated changes stay in the marginals.
    #[default]
    EntryZeroed,
    /// Drop row 0 and column 0 entirely and normalize by the remaining mass.
    RowColDeleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    size: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("confusion matrix needs at least 2 types, got {size}")));
        }
        Ok(Self { size, counts: vec![0; size * size] })
    }

    pub fn for_index(index: &ChangeTypeIndex) -> Self {
        Self::new(index.size()).expect("index size is at least 2")
    }

    /// Build from a row-major nested array (row = predicted).
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let mut q = Self::new(rows.len())?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != q.size {
                return Err(Error::Dimension(format!("row {i} has {} entries, expected {}", row.len(), q.size)));
            }
            q.counts[i * q.size..(i + 1) * q.size].copy_from_slice(row);
        }
        Ok(q)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, pred: usize, truth: usize) -> u64 {
        self.counts[pred * self.size + truth]
    }

    pub fn add(&mut self, pred: usize, truth: usize, n: u64) {
        self.counts[pred * self.size + truth] += n;
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.size).map(|r| r.to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, index: &ChangeTypeIndex, pred: &PairMap, truth: &PairMap) -> Result<()> {
        if index.size() != self.size {
            return Err(Error::Dimension(format!(
                "index has {} types, matrix has {}",
                index.size(),
                self.size
            )));
        }
        if (pred.height, pred.width) != (truth.height, truth.width) {
            return Err(Error::Dimension(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height, pred.width, truth.height, truth.width
            )));
        }
        let inconsistent = |m: &PairMap| m.pairs.iter().filter(|&&(a, b)| (a == 0) != (b == 0)).count();
        let bad = inconsistent(pred) + inconsistent(truth);
        if bad > 0 {
            return Err(Error::AnnotationConsistency { count: bad, path: None });
        }
        for (&(p1, p2), &(t1, t2)) in pred.pairs.iter().zip(&truth.pairs) {
            let i = index.pair_to_class(p1, p2)?;
            let j = index.pair_to_class(t1, t2)?;
            self.counts[i * self.size + j] += 1;
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.size != other.size {
            return Err(Error::Dimension(format!("cannot merge {0}x{0} with {1}x{1}", self.size, other.size)));
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        Ok(Self { size: self.size, counts })
    }

    fn require_nonempty(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::UndefinedInput("confusion matrix is empty".into())),
            t => Ok(t as f64),
        }
    }

    fn diagonal(&self) -> u64 {
        (0..self.size).map(|i| self.get(i, i)).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.size..(i + 1) * self.size].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.size).map(|i| self.get(i, j)).sum()
    }

    pub fn oa(&self) -> Result<f64> {
        let total = self.require_nonempty()?;
        Ok(self.diagonal() as f64 / total)
    }

    pub fn kappa(&self) -> Result<f64> {
        let total = self.require_nonempty()?;
        let rho = self.diagonal() as f64 / total;
        let eta = (0..self.size)
            .map(|j| self.row_sum(j) as f64 * self.col_sum(j) as f64)
            .sum::<f64>()
            / (total * total);
        Ok(chance_corrected(rho, eta))
    }

    /// IoU of non-change and IoU of pooled change.
    pub fn iou_pair(&self) -> Result<(f64, f64)> {
        let total = self.require_nonempty()?;
        let q00 = self.get(0, 0);
        let union0 = self.row_sum(0) + self.col_sum(0) - q00;
        let iou1 = if union0 == 0 { 1.0 } else { q00 as f64 / union0 as f64 };
        let changed = total as u64 - q00;
        let both: u64 = (1..self.size).map(|i| self.row_sum(i) - self.get(i, 0)).sum();
        let iou2 = if changed == 0 { 1.0 } else { both as f64 / changed as f64 };
        Ok((iou1, iou2))
    }

    pub fn miou(&self) -> Result<f64> {
        let (a, b) = self.iou_pair()?;
        Ok(0.5 * (a + b))
    }

    pub fn sek(&self) -> Result<f64> {
        self.sek_with(ChanceTerm::EntryZeroed)
    }

    /// `(rho_hat, eta_hat)`, or `None` when nothing changed anywhere.
    pub fn separated_agreement(&self, term: ChanceTerm) -> Result<Option<(f64, f64)>> {
        let total = self.require_nonempty()?;
        let q00 = self.get(0, 0);
        let rest = total - q00 as f64;
        if rest == 0.0 {
            return Ok(None);
        }
        let rho = (self.diagonal() - q00) as f64 / rest;
        let eta = match term {
            ChanceTerm::EntryZeroed => {
                let r0 = (self.row_sum(0) - q00) as f64;
                let c0 = (self.col_sum(0) - q00) as f64;
                let others: f64 = (1..self.size)
                    .map(|j| self.row_sum(j) as f64 * self.col_sum(j) as f64)
                    .sum();
                (r0 * c0 + others) / (rest * rest)
            }
            ChanceTerm::RowColDeleted => {
                let sub_row = |i: usize| (self.row_sum(i) - self.get(i, 0)) as f64;
                let sub_col = |j: usize| (self.col_sum(j) - self.get(0, j)) as f64;
                let mass: f64 = (1..self.size).map(sub_row).sum();
                if mass == 0.0 {
                    0.0
                } else {
                    (1..self.size).map(|j| sub_row(j) * sub_col(j)).sum::<f64>() / (mass * mass)
                }
            }
        };
        Ok(Some((rho, eta)))
    }

    pub fn sek_with(&self, term: ChanceTerm) -> Result<f64> {
        let Some((rho, eta)) = self.separated_agreement(term)? else {
            return Ok(1.0);
        };
        let (_, iou2) = self.iou_pair()?;
        Ok((iou2 - 1.0).exp() * chance_corrected(rho, eta))
    }

    /// 2x2 collapse of one change type against everything else.
    pub fn collapse_to(&self, change_type: usize) -> Result<Self> {
        if change_type == 0 || change_type >= self.size {
            return Err(Error::Label(format!(
                "change type {change_type} is not a changed type of a {}-type matrix",
                self.size
            )));
        }
        let t = change_type;
        let q11 = self.get(t, t);
        let q10 = self.row_sum(t) - q11;
        let q01 = self.col_sum(t) - q11;
        let q00 = self.total() - q11 - q10 - q01;
        Self::from_rows(&[vec![q00, q01], vec![q10, q11]])
    }

    /// SeK of one change type; 0 when the type is absent from both prediction and truth.
    pub fn categorical_sek(&self, change_type: usize) -> Result<f64> {
        Ok(self.categorical_sek_opt(change_type)?.unwrap_or(0.0))
    }

    fn categorical_sek_opt(&self, change_type: usize) -> Result<Option<f64>> {
        let c = self.collapse_to(change_type)?;
        if c.get(0, 0) == c.total() {
            return Ok(None);
        }
        c.sek().map(Some)
    }

    pub fn report(&self, index: &ChangeTypeIndex) -> Result<MetricReport> {
        if index.size() != self.size {
            return Err(Error::Dimension(format!(
                "index has {} types, matrix has {}",
                index.size(),
                self.size
            )));
        }
        let (iou1, iou2) = self.iou_pair()?;
        let mut per_type_sek = BTreeMap::new();
        for t in 1..self.size {
            let (a, b) = index.class_to_pair(t).expect("index in range");
            per_type_sek.insert(format!("({a},{b})"), self.categorical_sek_opt(t)?);
        }
        Ok(MetricReport {
            oa: self.oa()?,
            kappa: self.kappa()?,
            iou1,
            iou2,
            miou: 0.5 * (iou1 + iou2),
            sek: self.sek()?,
            per_type_sek,
            counts: self.rows(),
        })
    }
}

fn chance_corrected(rho: f64, eta: f64) -> f64 {
    if 1.0 - eta < DEGENERATE {
        if rho >= 1.0 - DEGENERATE { 1.0 } else { 0.0 }
    } else {
        (rho - eta) / (1.0 - eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: f64,
    pub kappa: f64,
    pub iou1: f64,
    pub iou2: f64,
    pub miou: f64,
    pub sek: f64,
    /// Keyed `"(l1,l2)"`; `None` for types absent from prediction and truth.
    pub per_type_sek: BTreeMap<String, Option<f64>>,
    pub counts: Vec<Vec<u64>>,
}

impl MetricReport {
    pub fn matrix(&self) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_rows(&self.counts)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("metric report: {e}")))
    }

    fn grid_value(&self, a: usize, b: usize) -> Option<f64> {
        self.per_type_sek.get(&format!("({a},{b})")).copied().flatten()
    }

    /// High OA with no usable change agreement: the signature of a model that
    /// predicts "no change" everywhere.
    pub fn imbalance_warning(&self) -> Option<String> {
        (self.oa > 0.8 && self.sek < 0.05).then(|| {
            format!(
                "warning: OA {:.4} is high while SeK is {:.4}; predictions look dominated by non-change",
                self.oa, self.sek
            )
        })
    }

    /// Categorical SeK grid as CSV, rows = class at t1, columns = class at t2.
    pub fn grid_csv(&self, class_names: &[String]) -> Result<String> {
        let n = class_names.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::from("t1\\t2")];
        header.extend(class_names.iter().cloned());
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for a in 1..=n {
            let mut row = vec![class_names[a - 1].clone()];
            row.extend((1..=n).map(|b| self.grid_value(a, b).map(|v| format!("{v}")).unwrap_or_default()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// Aligned text table: categorical SeK grid (percent, `--` for absent types)
    /// followed by the scalar metrics.
    pub fn text_table(&self, class_names: &[String]) -> String {
        let n = class_names.len();
        let width = class_names.iter().map(|s| s.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = write!(out, "{:>width$}", "t1\\t2");
        for name in class_names {
            let _ = write!(out, " {name:>width$}");
        }
        out.push('\n');
        for a in 1..=n {
            let _ = write!(out, "{:>width$}", class_names[a - 1]);
            for b in 1..=n {
                match self.grid_value(a, b) {
                    Some(v) => {
                        let _ = write!(out, " {:>width$.1}", 100.0 * v);
                    }
                    None => {
                        let _ = write!(out, " {:>width$}", "--");
                    }
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "IOU1 {:.2}  IOU2 {:.2}", 100.0 * self.iou1, 100.0 * self.iou2);
        let _ = writeln!(
            out,
            "OA {:.2}  kappa {:.2}  mIOU {:.2}  SeK {:.2}",
            100.0 * self.oa,
            100.0 * self.kappa,
            100.0 * self.miou,
            100.0 * self.sek
        );
        out
    }
}

#[cfg(test)]
mod tests;
