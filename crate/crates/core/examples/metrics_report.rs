//! Score a noisy prediction and print the full metric report.
//!
//! cargo run --example metrics_report

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scd::metrics::{ChangeTypeIndex, ChanceTerm, ConfusionMatrix, PairMap};

fn main() -> scd::Result<()> {
    let n = 3u8;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random_pair = |rng: &mut ChaCha8Rng| (rng.random_range(1..=n), rng.random_range(1..=n));
    let gt: Vec<(u8, u8)> = (0..64 * 64)
        .map(|_| if rng.random_bool(0.2) { random_pair(&mut rng) } else { (0, 0) })
        .collect();
    let pred: Vec<(u8, u8)> = gt
        .iter()
        .map(|&p| if rng.random_bool(0.8) { p } else if rng.random_bool(0.5) { (0, 0) } else { random_pair(&mut rng) })
        .collect();

    let index = ChangeTypeIndex::new(n as usize)?;
    let mut q = ConfusionMatrix::for_index(&index);
    q.accumulate(&index, &PairMap::new(64, 64, pred)?, &PairMap::new(64, 64, gt.clone())?)?;
    let report = q.report(&index)?;
    let names: Vec<String> = ["water", "tree", "building"].iter().map(|s| s.to_string()).collect();
    print!("{}", report.text_table(&names));
    println!("SeK with the row/column-deleted chance term: {:.4}", q.sek_with(ChanceTerm::RowColDeleted)?);
    println!("\n{}", report.grid_csv(&names)?);

    // predicting no change anywhere looks fine on OA alone
    let mut blank = ConfusionMatrix::for_index(&index);
    blank.accumulate(&index, &PairMap::unchanged(64, 64), &PairMap::new(64, 64, gt)?)?;
    let r = blank.report(&index)?;
    println!("all non-change: OA {:.3} SeK {:.3}", r.oa, r.sek);
    if let Some(w) = r.imbalance_warning() {
        println!("{w}");
    }
    Ok(())
}
