mod common;

use common::oracle;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scd::metrics::{ChangeTypeIndex, ConfusionMatrix, PairMap};

fn matrix(size: usize, max: u64) -> impl Strategy<Value = ConfusionMatrix> {
    prop::collection::vec(0..max, size * size).prop_filter_map("non-empty", move |v| {
        let rows: Vec<Vec<u64>> = v.chunks(size).map(|c| c.to_vec()).collect();
        let q = ConfusionMatrix::from_rows(&rows).ok()?;
        (q.total() > 0).then_some(q)
    })
}

fn sized_matrix() -> impl Strategy<Value = ConfusionMatrix> {
    (2usize..7).prop_flat_map(|s| matrix(s, 40))
}

fn permute(q: &ConfusionMatrix, perm: &[usize]) -> ConfusionMatrix {
    // perm acts on indices >= 1; index 0 stays put
    let s = q.size();
    let map = |i: usize| if i == 0 { 0 } else { perm[i - 1] + 1 };
    let mut rows = vec![vec![0; s]; s];
    for i in 0..s {
        for j in 0..s {
            rows[map(i)][map(j)] = q.get(i, j);
        }
    }
    ConfusionMatrix::from_rows(&rows).unwrap()
}

fn all_metrics(q: &ConfusionMatrix) -> [f64; 6] {
    let (a, b) = q.iou_pair().unwrap();
    [q.oa().unwrap(), q.kappa().unwrap(), a, b, q.miou().unwrap(), q.sek().unwrap()]
}

proptest! {
    #[test]
    fn permuting_change_types_changes_nothing(
        (q, perm) in sized_matrix().prop_flat_map(|q| {
            let n = q.size() - 1;
            (Just(q), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let p = permute(&q, &perm);
        for (a, b) in all_metrics(&q).iter().zip(all_metrics(&p)) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn metrics_stay_in_bounds(q in sized_matrix()) {
        let [oa, _, i1, i2, miou, sek] = all_metrics(&q);
        for v in [oa, i1, i2, miou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(sek <= 1.0);
    }

    #[test]
    fn sek_is_one_exactly_for_perfect_change_agreement(q in sized_matrix()) {
        let changed = q.total() - q.get(0, 0);
        let off_diag = (0..q.size())
            .flat_map(|i| (0..q.size()).map(move |j| (i, j)))
            .any(|(i, j)| i != j && q.get(i, j) > 0);
        let perfect = changed > 0 && !off_diag;
        let sek = q.sek().unwrap();
        if changed > 0 {
            prop_assert_eq!(sek == 1.0, perfect);
        }
        if perfect {
            prop_assert_eq!(q.iou_pair().unwrap().1, 1.0);
        }
    }

    #[test]
    fn scaling_unchanged_count_moves_oa_only(q in sized_matrix()) {
        let mut scaled = q.clone();
        scaled.add(0, 0, 9 * q.get(0, 0));
        let (before, after) = (q.oa().unwrap(), scaled.oa().unwrap());
        prop_assert!((after - 1.0).abs() <= (before - 1.0).abs() + 1e-15);
        prop_assert_eq!(q.sek().unwrap(), scaled.sek().unwrap());
        prop_assert_eq!(q.iou_pair().unwrap().1, scaled.iou_pair().unwrap().1);
    }

    #[test]
    fn merge_is_commutative_and_associative(
        (a, b, c) in (2usize..6).prop_flat_map(|s| (matrix(s, 30), matrix(s, 30), matrix(s, 30)))
    ) {
        prop_assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
        prop_assert_eq!(
            a.merge(&b).unwrap().merge(&c).unwrap(),
            a.merge(&b.merge(&c).unwrap()).unwrap()
        );
    }

    #[test]
    fn metrics_factor_through_merge(seed in 0u64..10_000, n in 2u8..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = ChangeTypeIndex::new(n as usize).unwrap();
        let gt = oracle::random_map(&mut rng, 16, 12, n, 0.4);
        let pred = oracle::noisy_copy(&mut rng, &gt, n, 0.6);
        let mut whole = ConfusionMatrix::for_index(&idx);
        whole.accumulate(&idx, &pred, &gt).unwrap();
        let half = |m: &PairMap, top: bool| {
            let rows = if top { 0..8 } else { 8..16 };
            let pairs = rows.flat_map(|y| m.pairs[y * 12..(y + 1) * 12].to_vec()).collect();
            PairMap::new(8, 12, pairs).unwrap()
        };
        let mut a = ConfusionMatrix::for_index(&idx);
        a.accumulate(&idx, &half(&pred, true), &half(&gt, true)).unwrap();
        let mut b = ConfusionMatrix::for_index(&idx);
        b.accumulate(&idx, &half(&pred, false), &half(&gt, false)).unwrap();
        let merged = a.merge(&b).unwrap();
        prop_assert_eq!(all_metrics(&merged), all_metrics(&whole));
    }

    #[test]
    fn categorical_collapse_matches_pixel_loop(seed in 0u64..10_000, n in 2u8..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = ChangeTypeIndex::new(n as usize).unwrap();
        let gt = oracle::random_map(&mut rng, 20, 20, n, 0.5);
        let pred = oracle::noisy_copy(&mut rng, &gt, n, 0.5);
        let mut q = ConfusionMatrix::for_index(&idx);
        q.accumulate(&idx, &pred, &gt).unwrap();
        for t in 1..idx.size() {
            let target = idx.class_to_pair(t).unwrap();
            // relabel: target type becomes (1,1), everything else non-change
            let binarize = |m: &PairMap| {
                let pairs = m.pairs.iter().map(|&p| if p == target { (1, 1) } else { (0, 0) }).collect();
                PairMap::new(m.height, m.width, pairs).unwrap()
            };
            let (bp, bg) = (binarize(&pred), binarize(&gt));
            let present = bp.pairs.iter().chain(&bg.pairs).any(|&p| p != (0, 0));
            let expected = if present { oracle::score(&bp, &bg).sek } else { 0.0 };
            let got = q.categorical_sek(t).unwrap();
            prop_assert!((got - expected).abs() <= 1e-15, "type {t}: {got} vs {expected}");
        }
    }
}
