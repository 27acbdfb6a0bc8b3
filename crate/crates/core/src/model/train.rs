//! Two-stage training, the baseline's training and held-out evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predict::{loss_vars, ClassWeights, GroundTruth, LossVars, SemanticChangePrediction};
use super::{Asn, Baseline};
use crate::dataset::{augment, categorical_weights, histogram, AugmentConfig, SampleRecord};
use crate::metrics::{ChangeTypeIndex, ConfusionMatrix, MetricReport};
use crate::tensor::{OptimizerConfig, ParamStore, Sgd, Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// `total_steps` is derived from epochs and batch size.
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    /// Epochs of the refinement stage; 0 skips it.
    pub atl_epochs: usize,
    pub atl_optimizer: OptimizerConfig,
    /// Validate every this many epochs (and after the last); 0 disables.
    pub validate_every: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            atl_epochs: 20,
            atl_optimizer: OptimizerConfig::default(),
            validate_every: 5,
            seed: 0,
        }
    }
}

impl TrainOptions {
    /// Single-sample steps at a larger rate; tuned for the synthetic 64x64 scenes.
    pub fn toy() -> Self {
        let mut o = Self { batch_size: 1, ..Self::default() };
        o.optimizer.base_lr = 0.02;
        o.atl_optimizer.base_lr = 0.02;
        o
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let fixed = |o: &OptimizerConfig| OptimizerConfig { total_steps: 1, ..o.clone() };
        fixed(&self.optimizer).validate()?;
        fixed(&self.atl_optimizer).validate()?;
        if !(self.augment.scale_min > 0.0 && self.augment.scale_max >= self.augment.scale_min) || self.augment.crop == 0 {
            return Err(Error::Config("augmentation needs 0 < scale_min <= scale_max and crop >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Base,
    Atl,
    Baseline,
}

impl Stage {
    fn stream(self) -> u64 {
        match self {
            Stage::Base => 1 << 32,
            Stage::Atl => 2 << 32,
            Stage::Baseline => 3 << 32,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_m1: f64,
    pub loss_m2: f64,
    pub loss_c: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_miou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_sek: Option<f64>,
}

pub type EpochHook<'a, M> = &'a mut dyn FnMut(&M, &EpochLog) -> Result<()>;

struct Loop<'a> {
    stage: Stage,
    items: usize,
    batch: usize,
    epochs: usize,
    optimizer: &'a OptimizerConfig,
    seed: u64,
}

impl Loop<'_> {
    fn steps_per_epoch(&self) -> usize {
        self.items.div_ceil(self.batch)
    }

    /// Epochs `start..epochs`, each with its own RNG derived from the seed, so
    /// a resumed run reproduces an uninterrupted one.
    fn run<M>(
        &self,
        model: &mut M,
        store: fn(&mut M) -> &mut ParamStore,
        start: usize,
        mut loss: impl FnMut(&M, &mut Tape, &[usize], &mut ChaCha8Rng) -> Result<LossVars>,
        mut after: impl FnMut(&M, EpochLog) -> Result<()>,
    ) -> Result<()> {
        if self.items == 0 {
            return Err(Error::Config("training set is empty".into()));
        }
        let per = self.steps_per_epoch();
        let sgd = Sgd::new(OptimizerConfig {
            total_steps: (per * self.epochs).max(1),
            ..self.optimizer.clone()
        })?;
        for epoch in start..self.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(self.stage.stream() + epoch as u64);
            let mut order: Vec<usize> = (0..self.items).collect();
            order.shuffle(&mut rng);
            let mut sums = [0.0; 4];
            let mut lr = 0.0;
            for (b, idx) in order.chunks(self.batch).enumerate() {
                let step = epoch * per + b;
                store(model).zero_grad();
                let mut tape = Tape::new();
                let lv = loss(model, &mut tape, idx, &mut rng)?;
                let vals = [lv.total, lv.e1, lv.e2, lv.ec].map(|v| tape.value(v).data()[0]);
                if !vals[0].is_finite() {
                    return Err(Error::Divergence(format!(
                        "{:?} epoch {epoch} step {step}: loss is {}",
                        self.stage, vals[0]
                    )));
                }
                tape.backward(lv.total, store(model))?;
                lr = sgd.step(store(model), step);
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
            }
            let nb = per as f64;
            after(
                model,
                EpochLog {
                    stage: self.stage,
                    epoch,
                    step: (epoch + 1) * per,
                    lr,
                    loss: sums[0] / nb,
                    loss_m1: sums[1] / nb,
                    loss_m2: sums[2] / nb,
                    loss_c: sums[3] / nb,
                    val_miou: None,
                    val_sek: None,
                },
            )?;
        }
        Ok(())
    }
}

/// Stack both images of `records[idx]`, optionally augmented, with their labels.
fn batch(
    records: &[SampleRecord],
    idx: &[usize],
    aug: Option<(&AugmentConfig, &mut ChaCha8Rng)>,
) -> Result<(Tensor, Tensor, GroundTruth)> {
    let picked: Vec<SampleRecord> = match aug {
        Some((cfg, rng)) => idx.iter().map(|&i| augment(&records[i], cfg, rng)).collect(),
        None => idx.iter().map(|&i| records[i].clone()).collect(),
    };
    let i1 = Tensor::stack(&picked.iter().map(|r| r.image_tensor(1)).collect::<Vec<_>>())?;
    let i2 = Tensor::stack(&picked.iter().map(|r| r.image_tensor(2)).collect::<Vec<_>>())?;
    Ok((i1, i2, GroundTruth::from_records(&picked)?))
}

fn with_validation<M>(
    log: &mut EpochLog,
    epochs: usize,
    every: usize,
    val: Option<&[SampleRecord]>,
    model: &M,
    eval: impl Fn(&M, &[SampleRecord]) -> Result<MetricReport>,
) -> Result<()> {
    if let Some(v) = val.filter(|v| !v.is_empty()) {
        if every > 0 && ((log.epoch + 1) % every == 0 || log.epoch + 1 == epochs) {
            let r = eval(model, v)?;
            log.val_miou = Some(r.miou);
            log.val_sek = Some(r.sek);
        }
    }
    Ok(())
}

/// First stage: all branches with the joint loss, refinement series frozen.
pub fn train_base(
    model: &mut Asn,
    train: &[SampleRecord],
    val: Option<&[SampleRecord]>,
    opts: &TrainOptions,
    start_epoch: usize,
    hook: EpochHook<Asn>,
) -> Result<()> {
    opts.validate()?;
    model.freeze_refinement();
    let lp = Loop {
        stage: Stage::Base,
        items: train.len(),
        batch: opts.batch_size,
        epochs: opts.epochs,
        optimizer: &opts.optimizer,
        seed: opts.seed,
    };
    let result = lp.run(
        model,
        |m| &mut m.store,
        start_epoch,
        |m, t, idx, rng| {
            let (i1, i2, gt) = batch(train, idx, Some((&opts.augment, rng)))?;
            let (a, b) = (t.constant(i1), t.constant(i2));
            let fv = m.forward_vars(t, a, b)?;
            let cfg = &m.config;
            loss_vars(t, (fv.m1, fv.m2, fv.c), &gt, cfg.alpha, cfg.beta, &ClassWeights::default())
        },
        |m, mut log| {
            with_validation(&mut log, opts.epochs, opts.validate_every, val, m, |m, v| evaluate(m, v, false))?;
            hook(m, &log)
        },
    );
    model.store.unfreeze_all();
    result
}

/// Inverse-log-frequency weights for the semantic classes (both dates) and
/// for the two change classes.
pub fn refinement_weights(train: &[SampleRecord], num_classes: usize) -> ClassWeights {
    let hist = histogram(train, num_classes);
    let changed: u64 = train.iter().map(|r| r.changed_pixels() as u64).sum();
    let total: u64 = train.iter().map(|r| (r.height * r.width) as u64).sum();
    ClassWeights {
        semantic: Some(categorical_weights(&hist)),
        change: Some(categorical_weights(&[total - changed, changed])),
    }
}

/// Second stage: only the refinement series learn, on frozen-backbone raw
/// maps of the un-augmented training set, with class-weighted loss.
pub fn train_refinement(
    model: &mut Asn,
    train: &[SampleRecord],
    val: Option<&[SampleRecord]>,
    opts: &TrainOptions,
    weights: &ClassWeights,
    start_epoch: usize,
    hook: EpochHook<Asn>,
) -> Result<()> {
    opts.validate()?;
    let mut cache = Vec::with_capacity(train.len());
    let all: Vec<usize> = (0..train.len()).collect();
    for idx in all.chunks(opts.batch_size.max(1)) {
        let (i1, i2, _) = batch(train, idx, None)?;
        let out = model.forward(&i1, &i2)?;
        for s in 0..idx.len() {
            cache.push((out.m1_raw.sample(s), out.m2_raw.sample(s), out.c_raw.sample(s)));
        }
    }
    model.freeze_backbone();
    let lp = Loop {
        stage: Stage::Atl,
        items: train.len(),
        batch: opts.batch_size,
        epochs: opts.atl_epochs,
        optimizer: &opts.atl_optimizer,
        seed: opts.seed,
    };
    let result = lp.run(
        model,
        |m| &mut m.store,
        start_epoch,
        |m, t, idx, _| {
            let pick = |f: fn(&(Tensor, Tensor, Tensor)) -> &Tensor| {
                Tensor::stack(&idx.iter().map(|&i| f(&cache[i]).clone()).collect::<Vec<_>>())
            };
            let m1 = t.constant(pick(|c| &c.0)?);
            let m2 = t.constant(pick(|c| &c.1)?);
            let c = t.constant(pick(|c| &c.2)?);
            let refined = m.atl_vars(t, m1, m2, c)?;
            let records: Vec<SampleRecord> = idx.iter().map(|&i| train[i].clone()).collect();
            let gt = GroundTruth::from_records(&records)?;
            loss_vars(t, refined, &gt, m.config.alpha, m.config.beta, weights)
        },
        |m, mut log| {
            with_validation(&mut log, opts.atl_epochs, opts.validate_every, val, m, |m, v| evaluate(m, v, true))?;
            hook(m, &log)
        },
    );
    model.store.unfreeze_all();
    result
}

/// The baseline sees each date separately with the same budget as the first stage.
pub fn train_baseline(
    model: &mut Baseline,
    train: &[SampleRecord],
    val: Option<&[SampleRecord]>,
    opts: &TrainOptions,
    start_epoch: usize,
    hook: EpochHook<Baseline>,
) -> Result<()> {
    opts.validate()?;
    let lp = Loop {
        stage: Stage::Baseline,
        items: train.len(),
        batch: opts.batch_size,
        epochs: opts.epochs,
        optimizer: &opts.optimizer,
        seed: opts.seed,
    };
    lp.run(
        model,
        |m| &mut m.store,
        start_epoch,
        |m, t, idx, rng| {
            let (i1, i2, gt) = batch(train, idx, Some((&opts.augment, rng)))?;
            let n = idx.len();
            let x = t.constant(Tensor::stack(&[i1, i2])?);
            let logits = m.logits(t, x)?;
            let m1 = t.narrow(logits, 0, 0, n)?;
            let m2 = t.narrow(logits, 0, n, n)?;
            let k = m.config.semantic_channels();
            gt.validate(k - 1)?;
            let l1: Vec<usize> = gt.label1.iter().map(|&l| l as usize).collect();
            let l2: Vec<usize> = gt.label2.iter().map(|&l| l as usize).collect();
            let e1 = t.cross_entropy(m1, &l1, None, None)?;
            let e2 = t.cross_entropy(m2, &l2, None, None)?;
            let total = t.add(e1, e2)?;
            let ec = t.scale(total, 0.0);
            Ok(LossVars { total, e1, e2, ec })
        },
        |m, mut log| {
            with_validation(&mut log, opts.epochs, opts.validate_every, val, m, evaluate_baseline)?;
            hook(m, &log)
        },
    )
}

const EVAL_BATCH: usize = 8;

fn score(
    records: &[SampleRecord],
    num_classes: usize,
    mut predict: impl FnMut(&Tensor, &Tensor) -> Result<Vec<SemanticChangePrediction>>,
) -> Result<MetricReport> {
    let index = ChangeTypeIndex::new(num_classes)?;
    let mut cm = ConfusionMatrix::for_index(&index);
    let all: Vec<usize> = (0..records.len()).collect();
    for idx in all.chunks(EVAL_BATCH) {
        let (i1, i2, _) = batch(records, idx, None)?;
        for (p, &i) in predict(&i1, &i2)?.iter().zip(idx) {
            cm.accumulate(&index, &p.scoring_pairs(), &records[i].pairs())?;
        }
    }
    cm.report(&index)
}

/// Metrics of plain predictions over `records`.
pub fn evaluate(model: &Asn, records: &[SampleRecord], use_atl: bool) -> Result<MetricReport> {
    score(records, model.config.num_classes, |a, b| model.predict(a, b, use_atl))
}

pub fn evaluate_baseline(model: &Baseline, records: &[SampleRecord]) -> Result<MetricReport> {
    score(records, model.config.num_classes, |a, b| model.predict(a, b))
}
