//! Generate a small synthetic bitemporal dataset and print its statistics.
//!
//! cargo run --example synth_dataset -- /tmp/scenes 40

use std::path::PathBuf;

use scd::dataset::{synth_generate, write_dataset, DatasetManifest, Split, SynthConfig};

fn main() -> scd::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args.next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("scd_synthetic"));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);

    let cfg = SynthConfig { count, seed: 1, ..SynthConfig::default() };
    let (records, stats) = synth_generate(&cfg)?;
    write_dataset(&root, &cfg, &records, &stats, true)?;

    let manifest = DatasetManifest::open(&root)?;
    manifest.validate()?;
    println!(
        "{} scenes in {} ({} train / {} test)",
        records.len(),
        root.display(),
        manifest.ids(Split::Train).len(),
        manifest.ids(Split::Test).len()
    );
    println!("changed pixels: {:.1}%", 100.0 * stats.change_fraction);
    println!(
        "regions: {} transitions, {} rebuilds, {} mixed",
        stats.transition_regions, stats.rebuild_regions, stats.mixed_regions
    );
    let mut types: Vec<_> = stats.change_types.iter().collect();
    types.sort_by(|a, b| b.1.cmp(a.1));
    for (t, n) in types.iter().take(5) {
        println!("  {t}: {n} px");
    }
    Ok(())
}
