mod common;

use common::*;
use deformfeat::field::{LabelVolume, LatticeGeometry, TISSUE_CLASSES};
use deformfeat::metrics::*;
use deformfeat::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vol(dims: &[usize], labels: Vec<u8>) -> LabelVolume {
    LabelVolume::new(LatticeGeometry::with_unit_spacing(dims).unwrap(), labels).unwrap()
}

#[test]
fn hand_cases() {
    // 3-4-5 triangle
    let mut a = vec![0u8; 5 * 5 * 3];
    let mut b = vec![0u8; 5 * 5 * 3];
    a[0] = 1;
    b[3 + 5 * 4] = 1;
    assert_eq!(hausdorff(&vol(&[5, 5, 3], a), &vol(&[5, 5, 3], b), 1).unwrap(), 5.0);

    // TP 8, FP 2, FN 2 on a 4x4 pair
    let truth: Vec<u8> = (0..16).map(|i| u8::from(i < 10)).collect();
    let pred: Vec<u8> = (0..16).map(|i| u8::from((2..12).contains(&i))).collect();
    assert_eq!(dsc(&vol(&[4, 4], pred), &vol(&[4, 4], truth), 1).unwrap(), 0.8);

    // 100 vs 90 voxels
    let truth: Vec<u8> = (0..1000).map(|i| u8::from(i < 100)).collect();
    let pred: Vec<u8> = (0..1000).map(|i| u8::from(i < 90)).collect();
    assert_eq!(avd(&vol(&[10, 10, 10], pred), &vol(&[10, 10, 10], truth), 1).unwrap(), 0.10);
}

#[test]
fn trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = LatticeGeometry::with_unit_spacing(&[8, 8, 8]).unwrap();
    let v = blob_labels(&mut rng, &g);
    let r = evaluate(&v, &v).unwrap();
    for c in &r.per_class {
        if v.count(c.label) > 0 {
            assert_eq!((c.dsc, c.hd_mm, c.avd), (1.0, Some(0.0), Some(0.0)));
        }
    }
    let a = vol(&[4, 4], (0..16).map(|i| u8::from(i < 8)).collect());
    let b = vol(&[4, 4], (0..16).map(|i| u8::from(i >= 8)).collect());
    assert_eq!(dsc(&a, &b, 1).unwrap(), 0.0);
    let empty = vol(&[4, 4], vec![0; 16]);
    assert_eq!(dsc(&empty, &empty, 1).unwrap(), 1.0);
    assert!(matches!(hausdorff(&a, &empty, 1), Err(Error::UndefinedMetric(_))));
    assert!(matches!(avd(&a, &empty, 1), Err(Error::UndefinedMetric(_))));
    assert_eq!(avd(&empty, &a, 1).unwrap(), 1.0);
}

#[test]
fn geometry_mismatch_is_an_error() {
    let a = vol(&[4, 4], vec![1; 16]);
    let b = vol(&[4, 5], vec![1; 20]);
    assert!(matches!(dsc(&a, &b, 1), Err(Error::Geometry(_))));
    assert!(matches!(evaluate(&a, &b), Err(Error::Geometry(_))));
}

#[test]
fn oracle_equivalence_on_random_volumes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let g = LatticeGeometry::new(&[16, 16, 16], &[0.9, 1.1, 2.5], &[0.0; 3]).unwrap();
    let voxel = g.cell_measure();
    for trial in 0..200 {
        let (pred, truth) = if trial % 2 == 0 {
            (blob_labels(&mut rng, &g), blob_labels(&mut rng, &g))
        } else {
            (random_labels(&mut rng, &g, 3, 0.3), random_labels(&mut rng, &g, 3, 0.3))
        };
        for c in TISSUE_CLASSES {
            let (p, t) = (pred.labels(), truth.labels());
            assert_eq!(dsc(&pred, &truth, c).unwrap(), count_dsc(p, t, c));
            match (avd(&pred, &truth, c), count_avd(p, t, c, voxel)) {
                (Ok(x), Some(y)) => assert_eq!(x, y),
                (Err(Error::UndefinedMetric(_)), None) => {}
                other => panic!("avd mismatch {other:?}"),
            }
            let (pa, pb) = (boundary_points(&pred, c), boundary_points(&truth, c));
            match hausdorff(&pred, &truth, c) {
                Ok(h) => {
                    let oracle = brute_hausdorff(&pa, &pb);
                    assert!((h - oracle).abs() <= 1e-9, "trial {trial} class {c}: {h} vs {oracle}");
                }
                Err(Error::UndefinedMetric(_)) => assert!(pa.is_empty() || pb.is_empty()),
                Err(e) => panic!("{e}"),
            }
        }
    }
}

#[test]
fn region_mode_matches_brute_force_over_all_voxels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = LatticeGeometry::new(&[10, 9], &[0.5, 1.5], &[0.0; 2]).unwrap();
    for _ in 0..20 {
        let (a, b) = (blob_labels(&mut rng, &g), blob_labels(&mut rng, &g));
        let pts = |v: &LabelVolume| -> Vec<[f64; 3]> {
            (0..g.len())
                .filter(|&l| v.labels()[l] == 2)
                .map(|l| {
                    let i = g.coords(l);
                    [i[0] as f64 * 0.5, i[1] as f64 * 1.5, 0.0]
                })
                .collect()
        };
        let (pa, pb) = (pts(&a), pts(&b));
        if pa.is_empty() || pb.is_empty() {
            continue;
        }
        let h = hausdorff_with(&a, &b, 2, HdPoints::Region).unwrap();
        assert!((h - brute_hausdorff(&pa, &pb)).abs() <= 1e-9);
    }
}

#[test]
fn report_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = LatticeGeometry::with_unit_spacing(&[12, 12, 12]).unwrap();
    let (a, b) = (blob_labels(&mut rng, &g), blob_labels(&mut rng, &g));
    let r = evaluate(&a, &b).unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "class,dsc,hd_mm,avd");
    assert!(lines[1].starts_with("CSF,") && lines[2].starts_with("GM,") && lines[3].starts_with("WM,"));
    assert!(lines[4].starts_with("mean,"));
    let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let table = r.table();
    for col in ["Dice CSF", "Dice WM", "HD GM", "AVD WM"] {
        assert!(table.contains(col));
    }
    let mean = r.per_class.iter().map(|c| c.dsc).sum::<f64>() / 3.0;
    assert!((r.mean_dsc - mean).abs() < 1e-15);
}

fn pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (prop::collection::vec(0u8..4, 6 * 5 * 4), prop::collection::vec(0u8..4, 6 * 5 * 4))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric_and_bounded((p, t) in pair()) {
        let g = LatticeGeometry::new(&[6, 5, 4], &[1.0, 0.5, 2.0], &[0.0; 3]).unwrap();
        let a = LabelVolume::new(g.clone(), p).unwrap();
        let b = LabelVolume::new(g, t).unwrap();
        for c in TISSUE_CLASSES {
            let d = dsc(&a, &b, c).unwrap();
            prop_assert_eq!(d, dsc(&b, &a, c).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            if let Ok(h) = hausdorff(&a, &b, c) {
                prop_assert_eq!(h, hausdorff(&b, &a, c).unwrap());
                prop_assert!(h >= 0.0);
            }
            if let Ok(v) = avd(&a, &b, c) {
                prop_assert!(v >= 0.0);
            }
            if b.count(c) > 0 {
                prop_assert_eq!(avd(&b, &b, c).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn avd_ignores_spacing((p, t) in pair(), s in 0.1f64..5.0) {
        let g1 = LatticeGeometry::with_unit_spacing(&[6, 5, 4]).unwrap();
        let g2 = LatticeGeometry::new(&[6, 5, 4], &[s, 2.0 * s, 0.5 * s], &[0.0; 3]).unwrap();
        for c in TISSUE_CLASSES {
            let r1 = avd(&LabelVolume::new(g1.clone(), p.clone()).unwrap(), &LabelVolume::new(g1.clone(), t.clone()).unwrap(), c);
            let r2 = avd(&LabelVolume::new(g2.clone(), p.clone()).unwrap(), &LabelVolume::new(g2.clone(), t.clone()).unwrap(), c);
            match (r1, r2) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() <= 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }

    #[test]
    fn dsc_and_avd_ignore_voxel_order((p, t) in pair(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..p.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pp: Vec<u8> = perm.iter().map(|&i| p[i]).collect();
        let tp: Vec<u8> = perm.iter().map(|&i| t[i]).collect();
        let g = LatticeGeometry::with_unit_spacing(&[6, 5, 4]).unwrap();
        let v = |x: &Vec<u8>| LabelVolume::new(g.clone(), x.clone()).unwrap();
        for c in TISSUE_CLASSES {
            prop_assert_eq!(dsc(&v(&p), &v(&t), c).unwrap(), dsc(&v(&pp), &v(&tp), c).unwrap());
            prop_assert_eq!(avd(&v(&p), &v(&t), c).ok(), avd(&v(&pp), &v(&tp), c).ok());
        }
    }
}
