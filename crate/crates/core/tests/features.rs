use deformfeat::deformation::{DeformationConfig, MonitorSpec};
use deformfeat::features::*;
use deformfeat::field::{LatticeGeometry, ScalarField};
use deformfeat::phantom::brain_phantom;
use deformfeat::{nifti, Error};
use proptest::prelude::*;

fn quick() -> DeformationConfig {
    DeformationConfig { time_steps: 30, ..Default::default() }
}

#[test]
fn constant_image_gives_unit_jd_and_zero_cv() {
    let g = LatticeGeometry::new(&[20, 18, 5], &[1.0, 1.0, 3.0], &[0.0; 3]).unwrap();
    let f = extract_jd_cv(&ScalarField::constant(g, 7.0), &MonitorSpec::default(), &quick()).unwrap();
    assert!(f.jd.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(f.cv.max_abs() < 1e-12);
    assert_eq!(f.cv_components().len(), 3);
}

#[test]
fn phantom_jd_is_positive_and_conserves_area() {
    let g = LatticeGeometry::new(&[65, 65], &[1.0, 1.0], &[-32.0, -32.0]).unwrap();
    let p = brain_phantom(&g).unwrap();
    let f = extract_jd_cv(&p.t1, &MonitorSpec::default(), &DeformationConfig::default()).unwrap();
    assert!(f.jd.min() > 0.0);
    let measure = g.domain_measure();
    assert!(((f.jd.integral() - measure) / measure).abs() <= 0.01);
    assert!(f.cv.max_abs() > 0.0);
    assert_eq!(f.jd.geometry(), &g);
    assert_eq!(f.cv.geometry(), &g);
}

fn edge_image() -> ScalarField {
    let g = LatticeGeometry::with_unit_spacing(&[65, 33]).unwrap();
    ScalarField::from_fn(g, |p| if p[0] < 32.0 { 0.2 } else { 1.0 }).unwrap()
}

fn jd_argmin_on_row(f: &Features, row: usize) -> usize {
    (0..65).min_by(|&a, &b| f.jd.at([a, row, 0]).total_cmp(&f.jd.at([b, row, 0]))).unwrap()
}

#[test]
fn gradient_monitor_puts_jd_minimum_on_the_edge() {
    // without the brightness term the monitor is symmetric about the edge,
    // so the edge stays put and the smallest cells sit on it
    let spec = MonitorSpec { alpha: 0.0, ..Default::default() };
    let f = extract_jd_cv(&edge_image(), &spec, &DeformationConfig::default()).unwrap();
    let col = jd_argmin_on_row(&f, 16);
    assert!((30..=34).contains(&col), "JD minimum at column {col}");
}

#[test]
fn brightness_monitor_maps_jd_minimum_onto_the_edge() {
    // the brighter half gets smaller cells, which shifts the edge in voxel
    // coordinates; the node with the smallest JD still lands on the edge
    let f = extract_jd_cv(&edge_image(), &MonitorSpec::default(), &DeformationConfig::default()).unwrap();
    let col = jd_argmin_on_row(&f, 16);
    let l = f.jd.geometry().index([col, 16, 0]);
    let x = f.map.node(l)[0];
    assert!((x - 32.0).abs() <= 2.0, "JD minimum maps to x = {x}");
}

#[test]
fn arms_assemble_named_channels() {
    let g = LatticeGeometry::with_unit_spacing(&[8, 8, 4]).unwrap();
    let p = brain_phantom(&g).unwrap();
    let jd = ScalarField::constant(g.clone(), 1.0);
    let cv = ScalarField::constant(g.clone(), 0.5);
    let s = ExperimentArm::ThreeJd
        .assemble(&[p.t1.clone(), p.t1_ir.clone(), p.flair.clone()], &[jd.clone()])
        .unwrap();
    assert_eq!(s.names(), ["T1", "T1-IR", "FLAIR", "JD"]);
    assert_eq!(s.channel("FLAIR").unwrap(), &p.flair);
    let s = ExperimentArm::Single.assemble(&[p.t1.clone()], &[]).unwrap();
    assert_eq!(s.len(), 1);
    let s = ExperimentArm::SingleJdCv.assemble(&[p.t1.clone()], &[jd.clone(), cv.clone()]).unwrap();
    assert_eq!(s.names(), ["T1", "JD", "CV"]);
    assert!(ExperimentArm::ThreeCv.assemble(&[p.t1.clone()], &[cv]).is_err());
}

#[test]
fn mismatched_channel_is_named() {
    let a = ScalarField::constant(LatticeGeometry::with_unit_spacing(&[8, 8]).unwrap(), 1.0);
    let b = ScalarField::constant(LatticeGeometry::with_unit_spacing(&[8, 9]).unwrap(), 1.0);
    let names = vec!["T1".to_string(), "JD".to_string()];
    match assemble_stack(&[a], &[b], &names) {
        Err(Error::Geometry(msg)) => assert!(msg.contains("JD"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn clinical_sized_volume_tiles_into_nine() {
    let g = LatticeGeometry::new(&[240, 240, 48], &[0.96, 0.96, 3.0], &[0.0; 3]).unwrap();
    let f = ScalarField::from_fn(g.clone(), |p| p[0] + 1000.0 * p[1] + 1e6 * p[2]).unwrap();
    let stack = ChannelStack::new(vec![f], vec!["T1".into()]).unwrap();
    let tiles = crop_subvolumes(&stack, &[80, 80, 80], &[80, 80, 80]).unwrap();
    assert_eq!(tiles.len(), 9);
    assert!(tiles.iter().all(|t| t.tile.extent == [80, 80, 48]));
    assert_eq!(stitch(&tiles, &g).unwrap(), stack);
}

#[test]
fn size_equal_to_dims_gives_one_tile() {
    let g = LatticeGeometry::new(&[10, 7, 5], &[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    let f = ScalarField::from_fn(g.clone(), |p| p[0] * p[1] - p[2]).unwrap();
    let stack = ChannelStack::new(vec![f], vec!["T1".into()]).unwrap();
    let tiles = crop_subvolumes(&stack, &[10, 7, 5], &[1, 1, 1]).unwrap();
    assert_eq!(tiles.len(), 1);
    assert_eq!(tiles[0].stack, stack);
}

#[test]
fn bad_tile_parameters() {
    let g = LatticeGeometry::with_unit_spacing(&[10, 10]).unwrap();
    let stack = ChannelStack::new(vec![ScalarField::constant(g, 0.0)], vec!["T1".into()]).unwrap();
    assert!(matches!(crop_subvolumes(&stack, &[4, 4], &[0, 2]), Err(Error::Parameter(_))));
    assert!(matches!(crop_subvolumes(&stack, &[2, 4], &[2, 2]), Err(Error::Parameter(_))));
    assert!(matches!(crop_subvolumes(&stack, &[4, 4, 4], &[2, 2, 2]), Err(Error::Parameter(_))));
}

#[test]
fn stack_written_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let g = LatticeGeometry::new(&[12, 10, 6], &[1.0, 1.0, 2.0], &[3.0, 0.0, -1.0]).unwrap();
    let p = brain_phantom(&g).unwrap();
    let jd = ScalarField::from_fn(g.clone(), |q| 1.0 + 0.01 * q[0]).unwrap();
    let stack = ExperimentArm::ThreeJd
        .assemble(&[p.t1.clone(), p.t1_ir, p.flair], &[jd])
        .unwrap();
    let tiles = crop_subvolumes(&stack, &[8, 8, 6], &[6, 6, 6]).unwrap();
    let m = write_stack(&stack, Some(ExperimentArm::ThreeJd), &tiles, dir.path()).unwrap();
    assert_eq!(m.channels.len(), 4);
    assert_eq!(m.tiles.len(), 4);
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let back = StackManifest::from_json(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.arm.as_deref(), Some("three+jd"));
    let t1 = nifti::read_scalar(dir.path().join(&m.channels[0].file)).unwrap();
    assert_eq!(t1.geometry(), &g);
    // float32 storage of float32-representable values
    let want = p.t1.map(|v| v as f32 as f64).unwrap();
    assert_eq!(t1, want);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tiling_is_an_exact_cover(
        dims in prop::collection::vec(3usize..30, 3),
        size in prop::collection::vec(3usize..40, 3),
        stride in prop::collection::vec(1usize..40, 3),
    ) {
        let g = LatticeGeometry::with_unit_spacing(&dims).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0] + 100.0 * p[1] + 1e4 * p[2]).unwrap();
        let stack = ChannelStack::new(vec![f], vec!["T1".into()]).unwrap();
        let gaps = (0..3).any(|a| size[a] < dims[a] && stride[a] > size[a]);
        let tiles = match crop_subvolumes(&stack, &size, &stride) {
            Err(Error::Parameter(_)) if gaps => return Ok(()),
            other => other.unwrap(),
        };
        let mut count = vec![0usize; g.len()];
        for t in &tiles {
            for k in 0..t.tile.extent[2] {
                for j in 0..t.tile.extent[1] {
                    for i in 0..t.tile.extent[0] {
                        count[g.index([i + t.tile.offset[0], j + t.tile.offset[1], k + t.tile.offset[2]])] += 1;
                    }
                }
            }
            for a in 0..3 {
                prop_assert!(t.tile.offset[a] + t.tile.extent[a] <= dims[a]);
            }
        }
        prop_assert!(count.iter().all(|&c| c >= 1));
        prop_assert_eq!(stitch(&tiles, &g).unwrap(), stack);
    }

    #[test]
    fn stacking_preserves_values_bit_exactly(vals in prop::collection::vec(-1e6f64..1e6, 27)) {
        let g = LatticeGeometry::with_unit_spacing(&[3, 3, 3]).unwrap();
        let f = ScalarField::new(g, vals.clone()).unwrap();
        let s = assemble_stack(&[f.clone()], &[f.map(|v| -v).unwrap()], &["T1".into(), "JD".into()]).unwrap();
        prop_assert_eq!(s.channels()[0].values(), vals.as_slice());
    }
}
