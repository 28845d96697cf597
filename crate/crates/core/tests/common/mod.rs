//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use deformfeat::deformation::normalize_monitor;
use deformfeat::field::{LabelVolume, LatticeGeometry, ScalarField};
use rand::Rng;

/// Normalized monitor with a Gaussian dip in cell size near the centre.
pub fn bump_monitor(n: usize) -> ScalarField {
    let g = LatticeGeometry::unit_box(&[n, n]).unwrap();
    let raw = ScalarField::from_fn(g, |p| {
        let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.45).powi(2);
        1.0 / (1.0 + (-r2 / (2.0 * 0.15f64.powi(2))).exp())
    })
    .unwrap();
    normalize_monitor(&raw).unwrap()
}

pub fn random_labels(rng: &mut impl Rng, g: &LatticeGeometry, classes: u8, p_fill: f64) -> LabelVolume {
    let labels = (0..g.len())
        .map(|_| if rng.gen_bool(p_fill) { rng.gen_range(1..=classes) } else { 0 })
        .collect();
    LabelVolume::new(g.clone(), labels).unwrap()
}

/// Blobby labels: random boxes painted over a background, so class
/// regions have interiors as well as boundaries.
pub fn blob_labels(rng: &mut impl Rng, g: &LatticeGeometry) -> LabelVolume {
    let dims = g.dims3();
    let mut labels = vec![0u8; g.len()];
    for _ in 0..rng.gen_range(2..8) {
        let c = rng.gen_range(1..=3u8);
        let mut lo = [0; 3];
        let mut hi = [1; 3];
        for a in 0..g.ndim() {
            lo[a] = rng.gen_range(0..dims[a]);
            hi[a] = (lo[a] + rng.gen_range(1..=dims[a] / 2)).min(dims[a]);
        }
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    labels[g.index([i, j, k])] = c;
                }
            }
        }
    }
    for l in labels.iter_mut() {
        if rng.gen_bool(0.05) {
            *l = rng.gen_range(0..=3);
        }
    }
    LabelVolume::new(g.clone(), labels).unwrap()
}

pub fn count_dsc(pred: &[u8], truth: &[u8], c: u8) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count();
    let np = pred.iter().filter(|&&p| p == c).count();
    let nt = truth.iter().filter(|&&t| t == c).count();
    if np + nt == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (np + nt) as f64
    }
}

pub fn count_avd(pred: &[u8], truth: &[u8], c: u8, voxel: f64) -> Option<f64> {
    let vt = truth.iter().filter(|&&t| t == c).count() as f64 * voxel;
    let vp = pred.iter().filter(|&&p| p == c).count() as f64 * voxel;
    (vt > 0.0).then(|| (vt - vp).abs() / vt)
}

/// Region voxels with a 26-neighbour outside the region or the volume.
pub fn boundary_points(v: &LabelVolume, c: u8) -> Vec<[f64; 3]> {
    let g = v.geometry();
    let d = g.dims3();
    let h = g.spacing3();
    let lab = v.labels();
    let mut pts = Vec::new();
    for l in 0..g.len() {
        if lab[l] != c {
            continue;
        }
        let idx = g.coords(l);
        let mut edge = false;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if g.ndim() == 2 && dz != 0 {
                        continue;
                    }
                    let q = [idx[0] as i64 + dx, idx[1] as i64 + dy, idx[2] as i64 + dz];
                    if (0..3).any(|a| q[a] < 0 || q[a] >= d[a] as i64) {
                        edge = true;
                    } else if lab[g.index([q[0] as usize, q[1] as usize, q[2] as usize])] != c {
                        edge = true;
                    }
                }
            }
        }
        if edge {
            pts.push([idx[0] as f64 * h[0], idx[1] as f64 * h[1], idx[2] as f64 * h[2]]);
        }
    }
    pts
}

/// Double loop over both point sets.
pub fn brute_hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let dist = |p: &[f64; 3], q: &[f64; 3]| {
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let directed = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Plain histogram equalization of values in `[0, 1]` with 256 bins:
/// each value maps to the fraction of values in its bin or below.
pub fn global_equalization(values: &[f64]) -> Vec<f64> {
    let bin = |v: f64| ((v * 256.0) as usize).min(255);
    let mut hist = [0usize; 256];
    for &v in values {
        hist[bin(v)] += 1;
    }
    let mut cdf = [0.0; 256];
    let mut acc = 0;
    for b in 0..256 {
        acc += hist[b];
        cdf[b] = acc as f64 / values.len() as f64;
    }
    values.iter().map(|&v| cdf[bin(v)]).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
