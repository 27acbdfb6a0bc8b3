use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn worked() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&[vec![50, 2, 3], vec![4, 10, 1], vec![6, 0, 24]]).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn worked_matrix_values() {
    let q = worked();
    assert!(close(q.oa().unwrap(), 0.84, 1e-12));
    assert!(close(q.kappa().unwrap(), (0.84 - 0.432) / (1.0 - 0.432), 1e-12));
    let (i1, i2) = q.iou_pair().unwrap();
    assert!(close(i1, 50.0 / 65.0, 1e-12));
    assert!(close(i2, 0.7, 1e-12));
    assert!(close(q.miou().unwrap(), 0.5 * (50.0 / 65.0 + 0.7), 1e-12));
    let (rho, eta) = q.separated_agreement(ChanceTerm::EntryZeroed).unwrap().unwrap();
    assert!(close(rho, 0.68, 1e-12));
    assert!(close(eta, 0.428, 1e-12));
    let expected = (-0.3f64).exp() * (0.68 - 0.428) / (1.0 - 0.428);
    assert!(close(q.sek().unwrap(), expected, 1e-12));
    assert!(close(q.sek().unwrap(), 0.3264, 1e-4));
}

#[test]
fn row_col_deleted_variant() {
    let q = worked();
    let (_, eta) = q.separated_agreement(ChanceTerm::RowColDeleted).unwrap().unwrap();
    assert!(close(eta, 710.0 / 1225.0, 1e-12));
    let sek = q.sek_with(ChanceTerm::RowColDeleted).unwrap();
    assert!(close(sek, (-0.3f64).exp() * (0.68 - eta) / (1.0 - eta), 1e-12));
}

#[test]
fn fixed_points() {
    let diag = ConfusionMatrix::from_rows(&[vec![50, 0, 0], vec![0, 30, 0], vec![0, 0, 20]]).unwrap();
    assert_eq!(diag.sek().unwrap(), 1.0);
    assert_eq!(diag.oa().unwrap(), 1.0);
    assert_eq!(diag.kappa().unwrap(), 1.0);
    let (_, eta) = diag.separated_agreement(ChanceTerm::EntryZeroed).unwrap().unwrap();
    assert!(close(eta, 0.52, 1e-12));

    let collapse = ConfusionMatrix::from_rows(&[vec![50, 30, 20], vec![0, 0, 0], vec![0, 0, 0]]).unwrap();
    assert_eq!(collapse.sek().unwrap(), 0.0);
    assert_eq!(collapse.oa().unwrap(), 0.5);
    assert_eq!(collapse.iou_pair().unwrap().1, 0.0);
    assert_eq!(
        collapse.separated_agreement(ChanceTerm::EntryZeroed).unwrap(),
        Some((0.0, 0.0))
    );
}

#[test]
fn degenerate_cases() {
    let empty = ConfusionMatrix::new(3).unwrap();
    assert!(matches!(empty.oa(), Err(Error::UndefinedInput(_))));
    assert!(matches!(empty.sek(), Err(Error::UndefinedInput(_))));
    let only_unchanged = ConfusionMatrix::from_rows(&[vec![9, 0], vec![0, 0]]).unwrap();
    assert_eq!(only_unchanged.iou_pair().unwrap(), (1.0, 1.0));
    assert_eq!(only_unchanged.sek().unwrap(), 1.0);
    assert_eq!(only_unchanged.kappa().unwrap(), 1.0);
    let only_changed = ConfusionMatrix::from_rows(&[vec![0, 0], vec![0, 7]]).unwrap();
    assert_eq!(only_changed.iou_pair().unwrap(), (1.0, 1.0));
    assert_eq!(only_changed.sek().unwrap(), 1.0);
    let wrong = ConfusionMatrix::from_rows(&[vec![0, 7], vec![7, 0]]).unwrap();
    assert_eq!(wrong.kappa().unwrap(), -1.0);
    assert!(ConfusionMatrix::new(1).is_err());
}

#[test]
fn pair_indexing() {
    let idx = ChangeTypeIndex::new(6).unwrap();
    assert_eq!(idx.pair_to_class(0, 0).unwrap(), 0);
    assert_eq!(idx.pair_to_class(1, 1).unwrap(), 1);
    assert_eq!(idx.pair_to_class(6, 6).unwrap(), 36);
    assert_eq!(idx.size(), 37);
    assert!(matches!(idx.pair_to_class(0, 3), Err(Error::AnnotationConsistency { .. })));
    assert!(matches!(idx.pair_to_class(7, 1), Err(Error::Label(_))));
    for i in 0..idx.size() {
        let (a, b) = idx.class_to_pair(i).unwrap();
        assert_eq!(idx.pair_to_class(a, b).unwrap(), i);
    }
    assert_eq!(idx.class_to_pair(37), None);
}

#[test]
fn accumulate_examples() {
    let idx = ChangeTypeIndex::new(2).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(u8, u8)> = (0..100)
        .map(|_| if r.random_bool(0.5) { (0, 0) } else { (r.random_range(1..3), r.random_range(1..3)) })
        .collect();
    let m = PairMap::new(10, 10, pairs).unwrap();
    let mut q = ConfusionMatrix::for_index(&idx);
    q.accumulate(&idx, &m, &m).unwrap();
    assert_eq!((0..5).map(|i| q.get(i, i)).sum::<u64>(), 100);

    let mut gt = PairMap::unchanged(10, 10);
    for p in &mut gt.pairs[..40] {
        *p = (1, 2);
    }
    let mut q = ConfusionMatrix::for_index(&idx);
    q.accumulate(&idx, &PairMap::unchanged(10, 10), &gt).unwrap();
    assert_eq!(q.get(0, 0), 60);
    assert_eq!(q.rows()[0].iter().sum::<u64>(), 100);

    let small = PairMap::unchanged(5, 10);
    assert!(matches!(q.accumulate(&idx, &small, &gt), Err(Error::Dimension(_))));
    let mut bad = gt.clone();
    bad.pairs[0] = (0, 1);
    bad.pairs[1] = (2, 0);
    bad.pairs[2] = (0, 2);
    match q.accumulate(&idx, &bad, &gt) {
        Err(Error::AnnotationConsistency { count, .. }) => assert_eq!(count, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn merge_is_a_monoid() {
    let q = worked();
    let zero = ConfusionMatrix::new(3).unwrap();
    assert_eq!(q.merge(&zero).unwrap(), q);
    let other = ConfusionMatrix::from_rows(&[vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]).unwrap();
    assert_eq!(q.merge(&other).unwrap(), other.merge(&q).unwrap());
    assert!(q.merge(&ConfusionMatrix::new(2).unwrap()).is_err());
}

#[test]
fn tiled_evaluation_matches_whole() {
    let idx = ChangeTypeIndex::new(3).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let mut random_map = || {
        let pairs = (0..64 * 64)
            .map(|_| if r.random_bool(0.6) { (0, 0) } else { (r.random_range(1..4), r.random_range(1..4)) })
            .collect();
        PairMap::new(64, 64, pairs).unwrap()
    };
    let (pred, gt) = (random_map(), random_map());
    let mut whole = ConfusionMatrix::for_index(&idx);
    whole.accumulate(&idx, &pred, &gt).unwrap();
    let tile = |m: &PairMap, ty: usize, tx: usize| {
        let mut pairs = Vec::new();
        for y in ty * 32..ty * 32 + 32 {
            pairs.extend_from_slice(&m.pairs[y * 64 + tx * 32..y * 64 + tx * 32 + 32]);
        }
        PairMap::new(32, 32, pairs).unwrap()
    };
    let mut merged = ConfusionMatrix::for_index(&idx);
    for ty in 0..2 {
        for tx in 0..2 {
            let mut part = ConfusionMatrix::for_index(&idx);
            part.accumulate(&idx, &tile(&pred, ty, tx), &tile(&gt, ty, tx)).unwrap();
            merged = merged.merge(&part).unwrap();
        }
    }
    assert_eq!(merged, whole);
    assert!((merged.sek().unwrap() - whole.sek().unwrap()).abs() <= 1e-15);
}

#[test]
fn kappa_of_independent_prediction_is_near_zero() {
    let idx = ChangeTypeIndex::new(2).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let draw = |r: &mut ChaCha8Rng| match r.random_range(0..10) {
        0..=4 => (0, 0),
        5..=6 => (1, 2),
        7 => (2, 2),
        _ => (2, 1),
    };
    let pred: Vec<_> = (0..100_000).map(|_| draw(&mut r)).collect();
    let gt: Vec<_> = (0..100_000).map(|_| draw(&mut r)).collect();
    let mut q = ConfusionMatrix::for_index(&idx);
    q.accumulate(&idx, &PairMap::new(250, 400, pred).unwrap(), &PairMap::new(250, 400, gt).unwrap())
        .unwrap();
    assert!(q.kappa().unwrap().abs() < 0.05);
}

#[test]
fn categorical_sek_cases() {
    let idx = ChangeTypeIndex::new(2).unwrap();
    let mut q = ConfusionMatrix::for_index(&idx);
    q.add(0, 0, 40);
    q.add(1, 1, 10);
    q.add(2, 3, 5);
    q.add(3, 2, 5);
    assert_eq!(q.categorical_sek(1).unwrap(), 1.0);
    assert_eq!(q.categorical_sek(4).unwrap(), 0.0);
    assert!(q.categorical_sek(0).is_err());
    let c = q.collapse_to(2).unwrap();
    assert_eq!(c.rows(), vec![vec![50, 5], vec![5, 0]]);
    // two wrong swaps: no agreement, chance term 0.5
    assert!(close(q.categorical_sek(2).unwrap(), -(-1.0f64).exp(), 1e-15));
    let report = q.report(&idx).unwrap();
    assert_eq!(report.per_type_sek["(1,1)"], Some(1.0));
    assert_eq!(report.per_type_sek["(2,2)"], None);
}

#[test]
fn report_round_trips_and_renders() {
    let idx = ChangeTypeIndex::new(2).unwrap();
    let mut q = ConfusionMatrix::for_index(&idx);
    q.add(0, 0, 70);
    q.add(1, 1, 13);
    q.add(1, 2, 3);
    q.add(4, 4, 11);
    q.add(0, 4, 3);
    let report = q.report(&idx).unwrap();
    let back = MetricReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.matrix().unwrap(), q);
    let names = vec!["water".to_string(), "tree".to_string()];
    let table = report.text_table(&names);
    assert!(table.contains("--"));
    assert!(table.contains("IOU1"));
    let csv = report.grid_csv(&names).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("water,"));
}

#[test]
fn collapse_pathology_on_mostly_unchanged_scene() {
    let idx = ChangeTypeIndex::new(3).unwrap();
    let mut gt = PairMap::unchanged(40, 40);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for p in gt.pairs.iter_mut().take(160) {
        *p = (r.random_range(1..4), r.random_range(1..4));
    }
    let mut q = ConfusionMatrix::for_index(&idx);
    q.accumulate(&idx, &PairMap::unchanged(40, 40), &gt).unwrap();
    let report = q.report(&idx).unwrap();
    assert!(report.oa > 0.8);
    assert_eq!(report.sek, 0.0);
    assert!(report.imbalance_warning().is_some());

    let mut perfect = ConfusionMatrix::for_index(&idx);
    perfect.accumulate(&idx, &gt, &gt).unwrap();
    let p = perfect.report(&idx).unwrap();
    assert_eq!((p.oa, p.kappa, p.iou1, p.iou2, p.miou, p.sek), (1.0, 1.0, 1.0, 1.0, 1.0, 1.0));
    assert!(p.per_type_sek.values().all(|v| v.is_none() || *v == Some(1.0)));
    assert!(p.imbalance_warning().is_none());
}

#[test]
fn flipping_both_maps_preserves_the_matrix() {
    let idx = ChangeTypeIndex::new(2).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut map = || {
        let pairs = (0..6 * 7)
            .map(|_| if r.random_bool(0.5) { (0, 0) } else { (r.random_range(1..3), r.random_range(1..3)) })
            .collect();
        PairMap::new(6, 7, pairs).unwrap()
    };
    let (a, b) = (map(), map());
    let mut q1 = ConfusionMatrix::for_index(&idx);
    q1.accumulate(&idx, &a, &b).unwrap();
    let mut q2 = ConfusionMatrix::for_index(&idx);
    q2.accumulate(&idx, &a.flip_horizontal(), &b.flip_horizontal()).unwrap();
    assert_eq!(q1, q2);
    assert_eq!(a.flip_horizontal().flip_horizontal(), a);
}
