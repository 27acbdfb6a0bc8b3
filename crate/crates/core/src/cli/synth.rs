use super::config::env_seed;
use super::{Outcome, ProfileArg, SynthArgs};
use crate::dataset::{synth_generate, write_dataset, Profile, SynthConfig};
use crate::{Error, Result};

pub fn run(a: SynthArgs) -> Result<Outcome> {
    let (mut cfg, file_seed) = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            (SynthConfig::from_toml(&text)?, table.contains_key("seed"))
        }
        None => (SynthConfig::default(), false),
    };
    cfg.seed = match a.seed {
        Some(s) => s,
        None if file_seed => cfg.seed,
        None => env_seed()?.unwrap_or(cfg.seed),
    };
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(s) = a.size {
        cfg.size = s;
    }
    if let Some(n) = a.classes {
        cfg.num_classes = n;
        if cfg.class_names.len() != n {
            cfg.class_names.clear();
        }
    }
    if let Some(p) = a.profile {
        cfg.profile = match p {
            ProfileArg::Symmetric => Profile::Symmetric,
            ProfileArg::Balanced => Profile::Balanced,
            ProfileArg::Asymmetric => Profile::Asymmetric,
        };
    }
    cfg.validate()?;
    let (records, stats) = synth_generate(&cfg)?;
    let manifest = write_dataset(&a.out, &cfg, &records, &stats, a.force)?;
    println!(
        "wrote {} samples ({} train, {} test) to {}; changed fraction {:.3}",
        stats.samples,
        manifest.ids(crate::dataset::Split::Train).len(),
        manifest.ids(crate::dataset::Split::Test).len(),
        a.out.display(),
        stats.change_fraction
    );
    Ok(Outcome::Ok)
}
