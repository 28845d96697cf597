mod common;

use std::f64::consts::PI;

use common::bump_monitor;
use deformfeat::deformation::*;
use deformfeat::field::{DiffeoMap, LatticeGeometry, ScalarField};
use deformfeat::numerics;
use deformfeat::Error;
use proptest::prelude::*;

fn run(f1: &ScalarField, steps: usize, integrator: Integrator) -> DiffeoMap {
    let u = build_velocity(f1).unwrap();
    let cfg = DeformationConfig { time_steps: steps, integrator, ..Default::default() };
    integrate_map(f1, &u, &cfg).unwrap()
}

#[test]
fn unit_monitor_gives_identity() {
    let f1 = ScalarField::constant(LatticeGeometry::unit_box(&[65, 65]).unwrap(), 1.0);
    let map = run(&f1, 100, Integrator::Rk4);
    assert!(map.max_displacement_cells() <= 1e-9);
}

#[test]
fn bump_monitor_is_reproduced_and_refines() {
    let mut last = f64::INFINITY;
    for (n, steps) in [(33, 50), (65, 100), (129, 200)] {
        let f1 = bump_monitor(n);
        let map = run(&f1, steps, Integrator::Rk4);
        let m = jacobian_mismatch(&map, &f1).unwrap();
        assert!(m <= 0.05, "n={n} mismatch {m}");
        assert!(m < last, "n={n} mismatch {m} not below {last}");
        last = m;
    }
}

#[test]
fn rk4_map_is_converged_in_time() {
    let f1 = bump_monitor(65);
    let a = run(&f1, 100, Integrator::Rk4);
    let b = run(&f1, 200, Integrator::Rk4);
    let d = a.node_errors_cells(&b).unwrap().into_iter().fold(0.0, f64::max);
    assert!(d <= 1e-3, "step halving moved nodes by {d} cells");
}

#[test]
fn euler_approaches_rk4() {
    let f1 = bump_monitor(33);
    let rk = run(&f1, 50, Integrator::Rk4);
    let e1 = run(&f1, 25, Integrator::Euler).node_errors_cells(&rk).unwrap();
    let e2 = run(&f1, 50, Integrator::Euler).node_errors_cells(&rk).unwrap();
    let (m1, m2) = (e1.into_iter().fold(0.0, f64::max), e2.into_iter().fold(0.0, f64::max));
    assert!(m2 < m1 && m1 / m2 > 1.6, "euler errors {m1} {m2}");
}

#[test]
fn jacobian_integrates_to_domain_measure() {
    let f1 = bump_monitor(65);
    let map = run(&f1, 100, Integrator::Rk4);
    let jd = numerics::jacobian_determinant(&map);
    let total = jd.values().iter().sum::<f64>() * jd.geometry().cell_measure();
    let measure = map.geometry().domain_measure();
    assert!(((total - measure) / measure).abs() <= 0.01);
    assert!(jd.min() > 0.0);
}

#[test]
fn wall_nodes_stay_on_their_faces() {
    let f1 = bump_monitor(33);
    let map = run(&f1, 50, Integrator::Rk4);
    let g = map.geometry();
    let d = g.dims3();
    for l in 0..g.len() {
        let idx = g.coords(l);
        let p = map.node(l);
        let q = g.node_position(idx);
        for a in 0..2 {
            if idx[a] == 0 || idx[a] + 1 == d[a] {
                assert_eq!(p[a], q[a]);
            }
            assert!(p[a] >= 0.0 && p[a] <= 1.0);
        }
    }
}

#[test]
fn velocity_potential_satisfies_the_poisson_equation() {
    let f1 = bump_monitor(65);
    let w = velocity_potential(&f1, &Default::default()).unwrap();
    let rhs = f1.map(|v| 1.0 - 1.0 / v).unwrap();
    let lap = numerics::laplacian(&w);
    let res = lap.zip_with(&rhs, |a, b| a - b).unwrap().max_abs();
    assert!(res <= 1e-6, "residual {res}");
    // the wide-stencil divergence of u agrees to truncation order
    let u = build_velocity(&f1).unwrap();
    let div = numerics::divergence(&u);
    let g = f1.geometry();
    let interior_err = (0..g.len())
        .filter(|&l| {
            let i = g.coords(l);
            (0..2).all(|a| i[a] >= 2 && i[a] + 3 <= g.dims()[a])
        })
        .map(|l| (div.values()[l] - rhs.values()[l]).abs())
        .fold(0.0, f64::max);
    assert!(interior_err <= 0.05 * rhs.max_abs(), "divergence error {interior_err}");
    for l in 0..g.len() {
        let i = g.coords(l);
        let v = u.at(l);
        if i[0] == 0 || i[0] == 64 {
            assert_eq!(v[0], 0.0);
        }
        if i[1] == 0 || i[1] == 64 {
            assert_eq!(v[1], 0.0);
        }
    }
}

#[test]
fn unnormalized_monitor_is_rejected() {
    let f1 = ScalarField::constant(LatticeGeometry::unit_box(&[9, 9]).unwrap(), 2.0);
    assert!(matches!(build_velocity(&f1), Err(Error::InvalidInput(_))));
    let bad = ScalarField::from_fn(LatticeGeometry::unit_box(&[9, 9]).unwrap(), |p| p[0] - 0.5).unwrap();
    assert!(matches!(build_velocity(&bad), Err(Error::InvalidInput(_))));
}

#[test]
fn extreme_monitor_with_single_step_folds() {
    let g = LatticeGeometry::unit_box(&[33, 33]).unwrap();
    let raw = ScalarField::from_fn(g, |p| {
        let r2 = (p[0] - 0.3).powi(2) + (p[1] - 0.3).powi(2);
        1.0 / (1.0 + 400.0 * (-r2 / 0.002).exp())
    })
    .unwrap();
    let f1 = normalize_monitor(&raw).unwrap();
    let u = build_velocity(&f1).unwrap();
    let cfg = DeformationConfig { time_steps: 1, integrator: Integrator::Euler, ..Default::default() };
    match integrate_map(&f1, &u, &cfg) {
        Err(Error::Folding { cell, value }) => {
            assert_eq!(cell.len(), 2);
            assert!(value <= 0.0);
        }
        other => panic!("expected folding, got {:?}", other.map(|m| m.max_displacement_cells())),
    }
}

#[test]
fn image_monitor_concentrates_cells_on_edges() {
    let g = LatticeGeometry::unit_box(&[65, 65]).unwrap();
    let img = ScalarField::from_fn(g, |p| if p[0] < 0.5 { 0.0 } else { 1.0 }).unwrap();
    let f1 = monitor_from_image(&img, &MonitorSpec::default()).unwrap();
    let integral = f1.map(|v| 1.0 / v).unwrap().integral();
    assert!((integral - 1.0).abs() < 1e-12);
    let (lo, hi) = (f1.min(), f1.max());
    let min_col = (0..65).min_by(|&a, &b| f1.at([a, 30, 0]).total_cmp(&f1.at([b, 30, 0]))).unwrap();
    assert!((31..=33).contains(&min_col), "min at column {min_col}");
    assert!(hi / lo > 2.0);
}

#[test]
fn image_monitor_respects_floor() {
    let g = LatticeGeometry::unit_box(&[17, 17]).unwrap();
    let img = ScalarField::from_fn(g, |p| (4.0 * PI * p[0]).sin() * p[1]).unwrap();
    let spec = MonitorSpec { alpha: 50.0, beta: 50.0, floor: 0.2 };
    let raw_min = {
        let f1 = monitor_from_image(&img, &spec).unwrap();
        f1.min() / f1.max()
    };
    // floor / max(raw) bounds the normalized ratio from below
    assert!(raw_min >= 0.2 - 1e-12);
    assert!(monitor_from_image(&img, &MonitorSpec { floor: 0.0, ..spec }).is_err());
    assert!(monitor_from_image(&img, &MonitorSpec { alpha: -1.0, ..spec }).is_err());
}

#[test]
fn three_dimensional_grid_generation() {
    let g = LatticeGeometry::unit_box(&[17, 17, 17]).unwrap();
    let raw = ScalarField::from_fn(g, |p| {
        let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.4).powi(2);
        1.0 / (1.0 + 0.8 * (-r2 / 0.04).exp())
    })
    .unwrap();
    let f1 = normalize_monitor(&raw).unwrap();
    let map = run(&f1, 40, Integrator::Rk4);
    let m = jacobian_mismatch(&map, &f1).unwrap();
    assert!(m <= 0.05, "3D mismatch {m}");
}

#[test]
fn initial_map_composes_the_flow() {
    let f1 = ScalarField::constant(LatticeGeometry::unit_box(&[9, 9]).unwrap(), 1.0);
    let start = DiffeoMap::identity(f1.geometry().clone());
    let u = build_velocity(&f1).unwrap();
    let cfg = DeformationConfig { initial_map: Some(start.clone()), ..Default::default() };
    assert_eq!(integrate_map(&f1, &u, &cfg).unwrap(), start);
    let other = DiffeoMap::identity(LatticeGeometry::unit_box(&[5, 5]).unwrap());
    let cfg = DeformationConfig { initial_map: Some(other), ..Default::default() };
    assert!(matches!(integrate_map(&f1, &u, &cfg), Err(Error::Geometry(_))));
}

#[test]
fn grid_text_lists_every_node() {
    let map = DiffeoMap::identity(LatticeGeometry::unit_box(&[3, 4]).unwrap());
    let text = grid_text(&map);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# dims 3 4"));
    assert_eq!(lines.clone().count(), 12);
    assert_eq!(lines.nth(5), Some("5 1.000000000 0.333333333"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_maps_never_fold(
        cx in 0.2f64..0.8, cy in 0.2f64..0.8, amp in 0.0f64..3.0, width in 0.08f64..0.3,
    ) {
        let g = LatticeGeometry::unit_box(&[21, 21]).unwrap();
        let raw = ScalarField::from_fn(g, |p| {
            let r2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
            1.0 / (1.0 + amp * (-r2 / (2.0 * width * width)).exp())
        }).unwrap();
        let f1 = normalize_monitor(&raw).unwrap();
        let map = run(&f1, 40, Integrator::Rk4);
        let jd = numerics::jacobian_determinant(&map);
        prop_assert!(jd.min() > 0.0);
        let total = jd.values().iter().sum::<f64>() * jd.geometry().cell_measure();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }
}
