use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{read_toml, write_effective, RunConfig, TtaConfig, CONFIG_FILE};
use super::infer::write_prediction;
use super::{Outcome, StageArg, TrainArgs};
use crate::dataset::{DatasetManifest, LabelPalette, SampleRecord, Split};
use crate::metrics::{ChangeTypeIndex, ConfusionMatrix, MetricReport};
use crate::model::{evaluate, refinement_weights, train_base, train_refinement, Asn, EpochLog, Stage};
use crate::tensor::checkpoint::{self, Contents};
use crate::{Error, Result};

pub const STATE_FILE: &str = "state.json";
const BASE_CKPT: &str = "base.ckpt";
const ATL_CKPT: &str = "atl.ckpt";
const MODEL_CKPT: &str = "model.ckpt";
const LOG_FILE: &str = "log.jsonl";

/// Progress of a run, rewritten after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub stage: StageArg,
    pub base_epochs: usize,
    pub atl_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_checkpoint: Option<PathBuf>,
    pub finished: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save_state(out: &Path, state: &RunState) -> Result<()> {
    write_atomic(&out.join(STATE_FILE), serde_json::to_string_pretty(state).expect("state serializes").as_bytes())
}

struct Recorder<'a> {
    out: &'a Path,
    log: File,
    state: RunState,
    validate_every: usize,
    test: &'a [SampleRecord],
    halt_left: Option<usize>,
    halted: bool,
}

impl Recorder<'_> {
    fn epoch(&mut self, m: &Asn, log: &EpochLog, total: usize) -> Result<()> {
        let mut line = log.clone();
        let atl = log.stage == Stage::Atl;
        let e = log.epoch + 1;
        if self.validate_every > 0 && !self.test.is_empty() && (e % self.validate_every == 0 || e == total) {
            let r = evaluate(m, self.test, atl)?;
            line.val_miou = Some(r.miou);
            line.val_sek = Some(r.sek);
            let dir = self.out.join("reports");
            std::fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
            let tag = if atl { "atl" } else { "base" };
            let p = dir.join(format!("{tag}_epoch{e:03}.json"));
            std::fs::write(&p, r.to_json()).map_err(|err| Error::io(&p, err))?;
        }
        let text = serde_json::to_string(&line).expect("log line serializes");
        let log_path = self.out.join(LOG_FILE);
        writeln!(self.log, "{text}").map_err(|err| Error::io(&log_path, err))?;
        let (ckpt, count) = if atl {
            (ATL_CKPT, &mut self.state.atl_epochs)
        } else {
            (BASE_CKPT, &mut self.state.base_epochs)
        };
        *count = e;
        write_atomic(&self.out.join(ckpt), &checkpoint::encode(&m.store, Contents::WeightsAndMomentum))?;
        save_state(self.out, &self.state)?;
        println!(
            "{} epoch {e}/{total} loss {:.4}{}",
            if atl { "atl " } else { "base" },
            line.loss,
            match (line.val_miou, line.val_sek) {
                (Some(mi), Some(s)) => format!(" val mIOU {mi:.4} SeK {s:.4}"),
                _ => String::new(),
            }
        );
        if let Some(n) = self.halt_left {
            if n <= 1 {
                self.halted = true;
                return Err(Error::State("halted on request".into()));
            }
            self.halt_left = Some(n - 1);
        }
        Ok(())
    }
}

/// Held-out metrics, with multi-scale and flip averaging when configured.
pub(crate) fn evaluate_tta(model: &Asn, records: &[SampleRecord], tta: &TtaConfig, use_atl: bool) -> Result<MetricReport> {
    if *tta == TtaConfig::default() {
        return evaluate(model, records, use_atl);
    }
    let index = ChangeTypeIndex::new(model.config.num_classes)?;
    let mut cm = ConfusionMatrix::for_index(&index);
    for r in records {
        let p = model.tta_predict(&r.image_tensor(1), &r.image_tensor(2), &tta.scales, tta.flip, use_atl)?;
        cm.accumulate(&index, &p[0].scoring_pairs(), &r.pairs())?;
    }
    cm.report(&index)
}

fn reject_overrides(a: &TrainArgs) -> Result<()> {
    let given = a.config.is_some()
        || a.data.is_some()
        || a.seed.is_some()
        || a.epochs.is_some()
        || a.atl_epochs.is_some()
        || a.batch_size.is_some()
        || a.lr.is_some()
        || a.validate_every.is_some()
        || a.tta.is_some()
        || a.base_checkpoint.is_some()
        || a.stage != StageArg::All;
    if given {
        return Err(Error::Config(
            "--resume reads the configuration from the run directory; only --out and --halt-after apply".into(),
        ));
    }
    Ok(())
}

fn fresh_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.dataset.root = d.clone();
        cfg.dataset.manifest = None;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(e) = a.atl_epochs {
        cfg.train.atl_epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.optimizer.base_lr = lr;
        cfg.train.atl_optimizer.base_lr = lr;
    }
    if let Some(v) = a.validate_every {
        cfg.train.validate_every = v;
    }
    if let Some(t) = &a.tta {
        cfg.tta = TtaConfig::parse(t)?;
    }
    cfg.resolve_seed(a.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(a: TrainArgs) -> Result<Outcome> {
    if a.halt_after == Some(0) {
        return Err(Error::Config("--halt-after must be at least 1".into()));
    }
    let (mut cfg, state) = if a.resume {
        reject_overrides(&a)?;
        let out = a.out.clone().ok_or_else(|| Error::Config("--resume needs --out".into()))?;
        let state_path = out.join(STATE_FILE);
        if !state_path.exists() {
            return Err(Error::Config(format!("nothing to resume in {}", out.display())));
        }
        let text = std::fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: RunState =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", state_path.display())))?;
        let mut cfg: RunConfig = read_toml(&out.join(CONFIG_FILE))?;
        cfg.out_dir = out;
        cfg.validate()?;
        if state.finished {
            println!("run in {} is already finished", cfg.out_dir.display());
            return Ok(Outcome::Ok);
        }
        (cfg, state)
    } else {
        let cfg = fresh_config(&a)?;
        if cfg.out_dir.join(STATE_FILE).exists() {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --resume or choose another --out",
                cfg.out_dir.display()
            )));
        }
        if a.stage == StageArg::Atl && cfg.train.atl_epochs == 0 {
            return Err(Error::Config("--stage atl with atl_epochs = 0 has nothing to do".into()));
        }
        let state = RunState {
            stage: a.stage,
            base_epochs: 0,
            atl_epochs: 0,
            base_checkpoint: a.base_checkpoint.clone(),
            finished: false,
        };
        (cfg, state)
    };
    let out = cfg.out_dir.clone();

    let manifest = DatasetManifest::load(&cfg.dataset.manifest_path())?;
    if manifest.num_classes != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model.num_classes is {}",
            manifest.num_classes, cfg.model.num_classes
        )));
    }
    cfg.dataset.class_names = manifest.class_names.clone();
    let train = manifest.load_split(Split::Train)?;
    if train.is_empty() {
        return Err(Error::Config("the manifest has no training samples".into()));
    }
    let test = manifest.load_split(Split::Test)?;

    let mut model = Asn::new(cfg.model.clone())?;
    let base_source = match state.stage {
        StageArg::Atl => Some(state.base_checkpoint.clone().unwrap_or_else(|| out.join(BASE_CKPT))),
        _ => None,
    };
    if let Some(p) = &base_source {
        if !p.exists() {
            return Err(Error::Config(format!("--stage atl needs a base checkpoint; none at {}", p.display())));
        }
    }
    if !a.resume {
        write_effective(&out, &cfg)?;
        save_state(&out, &state)?;
    }

    let log_path = out.join(LOG_FILE);
    let log = File::options()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut opts = cfg.train.clone();
    let validate_every = opts.validate_every;
    opts.validate_every = 0;
    let mut rec = Recorder { out: &out, log, state, validate_every, test: &test, halt_left: a.halt_after, halted: false };
    let halted = |rec: &Recorder, r: Result<()>| -> Result<bool> {
        match r {
            Err(_) if rec.halted => Ok(true),
            other => other.map(|_| false),
        }
    };

    let run_base = rec.state.stage != StageArg::Atl;
    let run_atl = match rec.state.stage {
        StageArg::All => opts.atl_epochs > 0,
        StageArg::Base => false,
        StageArg::Atl => true,
    };
    if run_base {
        if rec.state.base_epochs > 0 {
            checkpoint::load(&mut model.store, &out.join(BASE_CKPT))?;
        }
        if rec.state.base_epochs < opts.epochs {
            let start = rec.state.base_epochs;
            let total = opts.epochs;
            let r = train_base(&mut model, &train, None, &opts, start, &mut |m, l| rec.epoch(m, l, total));
            if halted(&rec, r)? {
                println!("halted; continue with --resume --out {}", out.display());
                return Ok(Outcome::Ok);
            }
        }
    } else if rec.state.atl_epochs == 0 {
        checkpoint::load(&mut model.store, base_source.as_deref().expect("checked above"))?;
    }
    if run_atl {
        if rec.state.atl_epochs > 0 {
            checkpoint::load(&mut model.store, &out.join(ATL_CKPT))?;
        }
        if rec.state.atl_epochs < opts.atl_epochs {
            let weights = refinement_weights(&train, cfg.model.num_classes);
            let start = rec.state.atl_epochs;
            let total = opts.atl_epochs;
            let r = train_refinement(&mut model, &train, None, &opts, &weights, start, &mut |m, l| {
                rec.epoch(m, l, total)
            });
            if halted(&rec, r)? {
                println!("halted; continue with --resume --out {}", out.display());
                return Ok(Outcome::Ok);
            }
        }
    }

    checkpoint::save(&model.store, Contents::Weights, &out.join(MODEL_CKPT))?;
    if !test.is_empty() {
        let report = evaluate_tta(&model, &test, &cfg.tta, run_atl)?;
        let write = |name: &str, text: &str| {
            let p = out.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("report.json", &report.to_json())?;
        write("sek_grid.csv", &report.grid_csv(&manifest.class_names)?)?;
        let table = report.text_table(&manifest.class_names);
        write("report.txt", &table)?;
        print!("{table}");
        if let Some(w) = report.imbalance_warning() {
            println!("{w}");
        }
        if let Some(first) = test.first() {
            let palette = LabelPalette::with_classes(&manifest.class_names)?;
            let x1 = first.image_tensor(1);
            let x2 = first.image_tensor(2);
            let p = model.tta_predict(&x1, &x2, &cfg.tta.scales, cfg.tta.flip, run_atl)?;
            write_prediction(&out.join("preview"), &first.id, &p[0], &palette)?;
        }
    }
    rec.state.finished = true;
    save_state(&out, &rec.state)?;
    println!("final checkpoint {}", out.join(MODEL_CKPT).display());
    Ok(Outcome::Ok)
}
