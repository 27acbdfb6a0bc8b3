use super::augment::{flip_record, transform};
use super::*;
use crate::metrics::{ChangeTypeIndex, ConfusionMatrix};
use rand::Rng;

fn random_record(seed: u64, h: usize, w: usize) -> SampleRecord {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let img = |r: &mut ChaCha8Rng| (0..h * w * 3).map(|_| r.random_range(0..=255u8) as f64 / 255.0).collect();
    let (i1, i2) = (img(&mut r), img(&mut r));
    let mut l1 = vec![0u8; h * w];
    let mut l2 = vec![0u8; h * w];
    for p in 0..h * w {
        if r.random_bool(0.3) {
            l1[p] = r.random_range(1..=4);
            l2[p] = r.random_range(1..=4);
        }
    }
    SampleRecord::new(format!("s{seed}"), h, w, 3, i1, i2, l1, l2).unwrap()
}

#[test]
fn save_load_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let rec = random_record(1, 12, 17);
    save_sample(&rec, dir.path(), false).unwrap();
    let back = load_from_root(dir.path(), &rec.id).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn overwrite_needs_force_and_preview_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let rec = random_record(2, 8, 8);
    let pal = LabelPalette::with_classes(&["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
    save_sample_with(&rec, dir.path(), false, Some(&pal)).unwrap();
    assert!(dir.path().join("preview").join("s2.png").exists());
    let err = save_sample(&rec, dir.path(), false).unwrap_err();
    assert!(matches!(err, Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::AlreadyExists));
    save_sample(&rec, dir.path(), true).unwrap();
    let preview = png_io::read_rgb(&dir.path().join("preview").join("s2.png")).unwrap();
    assert_eq!((preview.height, preview.width), (8, 18));
}

#[test]
fn full_size_tile_loads_with_derived_mask() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (512, 512);
    let mut l1 = vec![0u8; h * w];
    let mut l2 = vec![0u8; h * w];
    for p in 1000..5000 {
        l1[p] = 3;
        l2[p] = 5;
    }
    let rec = SampleRecord::new("tile", h, w, 3, vec![0.5; h * w * 3], vec![0.25; h * w * 3], l1, l2);
    // 0.5 is not on the 8-bit grid; the record is still valid
    let rec = rec.unwrap();
    save_sample(&rec, dir.path(), false).unwrap();
    let back = load_from_root(dir.path(), "tile").unwrap();
    assert_eq!(back.changed_pixels(), 4000);
    assert!(back.change_mask.iter().zip(&back.label1).all(|(&m, &l)| (m == 1) == (l != 0)));
}

#[test]
fn all_zero_labels_are_valid() {
    let rec = SampleRecord::new("z", 4, 4, 3, vec![0.0; 48], vec![1.0; 48], vec![0; 16], vec![0; 16]).unwrap();
    assert_eq!(rec.changed_pixels(), 0);
}

#[test]
fn inconsistent_pixels_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let rec = random_record(3, 10, 10);
    let paths = save_sample(&rec, dir.path(), false).unwrap();
    let mut l2 = rec.label2.clone();
    let mut broken = 0;
    for (p, l) in l2.iter_mut().enumerate() {
        if rec.label1[p] != 0 && broken < 3 {
            *l = 0;
            broken += 1;
        }
    }
    png_io::write(&paths.label2, &Raster { width: 10, height: 10, channels: 1, data: l2 }).unwrap();
    match load_from_root(dir.path(), &rec.id) {
        Err(Error::AnnotationConsistency { count, path }) => {
            assert_eq!(count, 3);
            assert!(path.is_some());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn extent_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let rec = random_record(4, 6, 6);
    let paths = save_sample(&rec, dir.path(), false).unwrap();
    png_io::write(&paths.label1, &Raster { width: 5, height: 6, channels: 1, data: vec![0; 30] }).unwrap();
    let err = load_from_root(dir.path(), &rec.id).unwrap_err();
    assert!(matches!(err, Error::Format(ref m) if m.contains("label1")));
}

#[test]
fn split_sizes_and_determinism() {
    let ids: Vec<String> = (0..4662).map(|i| format!("{i:05}")).collect();
    let names = vec!["a".to_string(), "b".to_string()];
    let m = split_manifest("/tmp/x", &ids, 2968.0 / 4662.0, 7, names.clone()).unwrap();
    assert_eq!(m.ids(Split::Train).len(), 2968);
    assert_eq!(m.ids(Split::Test).len(), 1694);
    let again = split_manifest("/tmp/x", &ids, 2968.0 / 4662.0, 7, names.clone()).unwrap();
    assert_eq!(m, again);
    let other = split_manifest("/tmp/x", &ids, 2968.0 / 4662.0, 8, names.clone()).unwrap();
    assert_ne!(m.entries, other.entries);
    assert!(split_manifest("/tmp/x", &ids, 1.0, 7, names.clone()).is_err());
    assert!(split_manifest("/tmp/x", &ids, 0.0, 7, names.clone()).is_err());
    assert!(split_manifest("/tmp/x", &[], 0.5, 7, names).is_err());
}

#[test]
fn manifest_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..10).map(|i| format!("{i}")).collect();
    let names = vec!["a".to_string(), "b".to_string(), "c".to_string(), "d".to_string()];
    let m = split_manifest(dir.path(), &ids, 0.7, 3, names).unwrap();
    for id in &ids {
        let mut r = random_record(5, 4, 4);
        r.id = id.clone();
        save_sample(&r, dir.path(), false).unwrap();
    }
    m.save().unwrap();
    let back = DatasetManifest::open(dir.path()).unwrap();
    assert_eq!(back, m);
    back.validate().unwrap();
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(text.contains("\"split\": \"train\""));
}

#[test]
fn double_flip_and_unit_scale_are_identities() {
    let rec = random_record(6, 16, 16);
    assert_eq!(flip_record(&flip_record(&rec)), rec);
    assert_eq!(transform(&rec, false, (16, 16), (0, 0), 16), rec);
    let flipped = transform(&rec, true, (16, 16), (0, 0), 16);
    assert_eq!(flipped, flip_record(&rec));
}

#[test]
fn augmented_records_stay_valid() {
    let rec = random_record(7, 24, 24);
    let cfg = AugmentConfig { crop: 24, ..AugmentConfig::default() };
    let mut r = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let a = augment(&rec, &cfg, &mut r);
        a.validate().unwrap();
        assert_eq!((a.height, a.width), (24, 24));
    }
}

#[test]
fn flipping_prediction_and_truth_leaves_metrics_unchanged() {
    let idx = ChangeTypeIndex::new(4).unwrap();
    let (a, b) = (random_record(9, 9, 11), random_record(10, 9, 11));
    let mut q1 = ConfusionMatrix::for_index(&idx);
    q1.accumulate(&idx, &a.pairs(), &b.pairs()).unwrap();
    let mut q2 = ConfusionMatrix::for_index(&idx);
    q2.accumulate(&idx, &flip_record(&a).pairs(), &flip_record(&b).pairs()).unwrap();
    assert_eq!(q1.report(&idx).unwrap(), q2.report(&idx).unwrap());
}

#[test]
fn histogram_cases() {
    let mut l = vec![0u8; 16];
    l[..8].iter_mut().for_each(|v| *v = 1);
    let rec = SampleRecord::new("h", 4, 4, 3, vec![0.0; 48], vec![0.0; 48], l.clone(), l).unwrap();
    let h = histogram([&rec], 1);
    assert_eq!(h[0], h[1]);
    assert_eq!(categorical_weights(&[5, 5, 5, 5]), vec![1.0; 4]);
    let w = categorical_weights(&[90, 9, 1]);
    assert!(w[0] < w[1] && w[1] < w[2]);
    assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);

    let cfg = SynthConfig { count: 6, ..SynthConfig::default() };
    let (records, _) = synth_generate(&cfg).unwrap();
    let mut oracle = vec![0u64; 5];
    for r in &records {
        for y in 0..r.height {
            for x in 0..r.width {
                oracle[r.label1[y * r.width + x] as usize] += 1;
                oracle[r.label2[y * r.width + x] as usize] += 1;
            }
        }
    }
    assert_eq!(histogram(&records, 4), oracle);
}

#[test]
fn class_histogram_reads_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { count: 5, ..SynthConfig::default() };
    let (records, stats) = synth_generate(&cfg).unwrap();
    let m = write_dataset(dir.path(), &cfg, &records, &stats, false).unwrap();
    let train: Vec<_> = records.iter().filter(|r| m.ids(Split::Train).contains(&r.id.as_str())).collect();
    assert_eq!(class_histogram(&m, Split::Train).unwrap(), histogram(train, 4));
}

#[test]
fn synthetic_sets_are_deterministic_and_valid() {
    let cfg = SynthConfig { count: 200, seed: 11, ..SynthConfig::default() };
    let (a, stats) = synth_generate(&cfg).unwrap();
    let (b, _) = synth_generate(&cfg).unwrap();
    assert_eq!(a, b);
    for r in &a {
        r.validate().unwrap();
        r.check_classes(4).unwrap();
    }
    assert!((stats.change_fraction - 0.2).abs() <= 0.05, "{}", stats.change_fraction);
    assert!(stats.rebuild_regions > 0 && stats.mixed_regions > 0 && stats.transition_regions > 0);
    assert!(stats.change_types.keys().any(|k| k == "(1,1)" || k == "(2,2)" || k == "(3,3)" || k == "(4,4)"));
    let other = synth_generate(&SynthConfig { seed: 12, ..cfg }).unwrap().0;
    assert_ne!(a[0], other[0]);
}

#[test]
fn synth_config_parses_and_rejects() {
    let cfg = SynthConfig::from_toml("seed = 3\ncount = 10\nprofile = \"asymmetric\"\n").unwrap();
    assert_eq!((cfg.seed, cfg.count, cfg.profile), (3, 10, Profile::Asymmetric));
    assert_eq!(SynthConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(SynthConfig::from_toml("bogus = 1").is_err());
    assert!(synth_generate(&SynthConfig { count: 0, ..SynthConfig::default() }).is_err());
    assert!(synth_generate(&SynthConfig { size: 16, ..SynthConfig::default() }).is_err());
}

#[test]
fn written_datasets_are_byte_identical() {
    let cfg = SynthConfig { count: 3, ..SynthConfig::default() };
    let (records, stats) = synth_generate(&cfg).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(d1.path(), &cfg, &records, &stats, false).unwrap();
    write_dataset(d2.path(), &cfg, &records, &stats, false).unwrap();
    for sub in ["im1", "im2", "label1", "label2", "preview"] {
        let f = |d: &Path| std::fs::read(d.join(sub).join("00001.png")).unwrap();
        assert_eq!(f(d1.path()), f(d2.path()));
    }
    let loaded = DatasetManifest::open(d1.path()).unwrap();
    loaded.validate().unwrap();
    assert_eq!(loaded.load_split(Split::Train).unwrap().len() + loaded.load_split(Split::Test).unwrap().len(), 3);
    assert_eq!(load_from_root(d1.path(), "00002").unwrap(), records[2]);
}
