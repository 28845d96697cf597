//! Deterministic synthetic brain phantom: nested tissue shells with a
//! folded grey/white interface and two ventricles, rendered as T1, T1-IR
//! and FLAIR-like intensity images.

use std::f64::consts::PI;

use crate::error::Result;
use crate::field::{LabelVolume, LatticeGeometry, ScalarField, BACKGROUND, CSF, GM, WM};

#[derive(Debug, Clone)]
pub struct Phantom {
    pub labels: LabelVolume,
    pub t1: ScalarField,
    pub t1_ir: ScalarField,
    pub flair: ScalarField,
}

/// Tissue label at box-normalized coordinates `q ∈ [0, 1]^ndim`.
fn tissue(q: [f64; 3], ndim: usize) -> u8 {
    let x = (q[0] - 0.5) / 0.44;
    let y = (q[1] - 0.5) / 0.40;
    let z = if ndim == 3 { (q[2] - 0.5) / 0.42 } else { 0.0 };
    let rho = (x * x + y * y + z * z).sqrt();
    let theta = y.atan2(x);
    let fold = 1.0 + 0.07 * (9.0 * theta).sin() * (1.0 + 0.5 * (5.0 * PI * z).cos());
    let vx = x.abs() - 0.18;
    let ventricle = (vx / 0.1).powi(2) + (y / 0.22).powi(2) + (z / 0.25).powi(2) < 1.0;
    if rho > 0.97 {
        BACKGROUND
    } else if rho > 0.86 || ventricle {
        CSF
    } else if rho > 0.55 * fold {
        GM
    } else {
        WM
    }
}

fn intensity(label: u8, modality: usize) -> f64 {
    // rows: background, CSF, GM, WM; columns: T1, T1-IR, FLAIR
    const TABLE: [[f64; 3]; 4] = [
        [0.0, 0.0, 0.0],
        [0.25, 0.08, 0.12],
        [0.60, 0.55, 0.75],
        [0.90, 0.95, 0.55],
    ];
    TABLE[label as usize][modality]
}

/// Renders the phantom on `geom`, scaled to fill the box.
pub fn brain_phantom(geom: &LatticeGeometry) -> Result<Phantom> {
    let ndim = geom.ndim();
    let norm = |l: usize| {
        let p = geom.node_position(geom.coords(l));
        let mut q = [0.5; 3];
        for a in 0..ndim {
            q[a] = (p[a] - geom.origin()[a]) / geom.extent(a);
        }
        q
    };
    let labels: Vec<u8> = (0..geom.len()).map(|l| tissue(norm(l), ndim)).collect();
    // mild smooth bias field so images are not piecewise constant
    let bias = |q: [f64; 3]| 1.0 + 0.04 * (PI * q[0]).sin() * (PI * q[1]).cos() + 0.02 * q[2];
    let render = |m: usize| -> Result<ScalarField> {
        let v = (0..geom.len())
            .map(|l| intensity(labels[l], m) * bias(norm(l)))
            .collect();
        ScalarField::new(geom.clone(), v)
    };
    Ok(Phantom {
        t1: render(0)?,
        t1_ir: render(1)?,
        flair: render(2)?,
        labels: LabelVolume::new(geom.clone(), labels)?,
    })
}
