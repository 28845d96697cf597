//! Segmentation metrics: Dice similarity, Hausdorff distance (exact, via a
//! Euclidean distance transform in mm) and absolute volume difference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{LabelVolume, LatticeGeometry, TISSUE_CLASSES};

/// Which voxels of a class region enter the Hausdorff point sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HdPoints {
    /// Region voxels with at least one 26-neighbour (8 in 2D) outside the
    /// region or outside the volume.
    #[default]
    Boundary,
    /// Every region voxel.
    Region,
}

fn check(pred: &LabelVolume, truth: &LabelVolume) -> Result<()> {
    truth.geometry().ensure_same(pred.geometry(), "prediction")
}

fn counts(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    (tp, fp, fnn)
}

/// `2 TP / (2 TP + FP + FN)`; 1 when the class is absent from both.
pub fn dsc(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> Result<f64> {
    check(pred, truth)?;
    let (tp, fp, fnn) = counts(pred, truth, class);
    let denom = 2 * tp + fp + fnn;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// `|vol(truth) - vol(pred)| / vol(truth)`.
pub fn avd(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> Result<f64> {
    check(pred, truth)?;
    let voxel = truth.geometry().cell_measure();
    let vt = truth.count(class) as f64 * voxel;
    let vp = pred.count(class) as f64 * voxel;
    if vt == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "AVD of class {class}: empty ground truth"
        )));
    }
    Ok((vt - vp).abs() / vt)
}

fn point_set(vol: &LabelVolume, class: u8, mode: HdPoints) -> Vec<bool> {
    let g = vol.geometry();
    let labels = vol.labels();
    let inside: Vec<bool> = labels.iter().map(|&l| l == class).collect();
    if mode == HdPoints::Region {
        return inside;
    }
    let dims = g.dims3();
    let ndim = g.ndim();
    (0..labels.len())
        .into_par_iter()
        .map(|l| {
            if !inside[l] {
                return false;
            }
            let idx = g.coords(l);
            let span = |a: usize| if a < ndim { -1isize..=1 } else { 0..=0 };
            for dz in span(2) {
                for dy in span(1) {
                    for dx in span(0) {
                        let q = [idx[0] as isize + dx, idx[1] as isize + dy, idx[2] as isize + dz];
                        let out = (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as isize);
                        if out || !inside[g.index([q[0] as usize, q[1] as usize, q[2] as usize])] {
                            return true;
                        }
                    }
                }
            }
            false
        })
        .collect()
}

/// Squared Euclidean distance transform along one line (lower envelope of
/// parabolas), with sample positions `s * q`.
fn edt_line(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let x = |q: usize| s * q as f64;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let sct = ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)));
                    if sct <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(sct);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < x(q) {
            k += 1;
        }
        let d = x(q) - x(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Exact squared distance (mm²) from every voxel to the nearest set voxel.
pub fn squared_distance_transform(set: &[bool], geom: &LatticeGeometry) -> Vec<f64> {
    let mut d: Vec<f64> = set.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let dims = geom.dims3();
    let strides = geom.strides();
    for a in 0..geom.ndim() {
        let n = dims[a];
        let st = strides[a];
        let starts: Vec<usize> = (0..d.len()).filter(|&l| geom.coords(l)[a] == 0).collect();
        let s = geom.spacing()[a];
        let lines: Vec<Vec<f64>> = starts
            .par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(v, z), &l0| {
                    let f: Vec<f64> = (0..n).map(|j| d[l0 + j * st]).collect();
                    let mut out = vec![0.0; n];
                    edt_line(&f, s, &mut out, v, z);
                    out
                },
            )
            .collect();
        for (&l0, line) in starts.iter().zip(lines) {
            for (j, val) in line.into_iter().enumerate() {
                d[l0 + j * st] = val;
            }
        }
    }
    d
}

fn directed(from: &[bool], to_dt: &[f64]) -> f64 {
    from.iter()
        .zip(to_dt)
        .filter(|(&a, _)| a)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance in mm between the class boundaries.
pub fn hausdorff(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> Result<f64> {
    hausdorff_with(pred, truth, class, HdPoints::Boundary)
}

pub fn hausdorff_with(pred: &LabelVolume, truth: &LabelVolume, class: u8, mode: HdPoints) -> Result<f64> {
    check(pred, truth)?;
    let a = point_set(pred, class, mode);
    let b = point_set(truth, class, mode);
    let empty = |s: &[bool]| !s.iter().any(|&x| x);
    if empty(&a) || empty(&b) {
        return Err(Error::UndefinedMetric(format!(
            "Hausdorff distance of class {class}: empty {}",
            if empty(&a) { "prediction" } else { "ground truth" }
        )));
    }
    let g = truth.geometry();
    let da = squared_distance_transform(&a, g);
    let db = squared_distance_transform(&b, g);
    Ok(directed(&a, &db).max(directed(&b, &da)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: u8,
    pub name: String,
    pub dsc: f64,
    /// `None` when undefined (a class set is empty).
    pub hd_mm: Option<f64>,
    pub avd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Means over the tissue classes; `None` if any class value is undefined.
    pub mean_dsc: f64,
    pub mean_hd_mm: Option<f64>,
    pub mean_avd: Option<f64>,
    pub hd_points: HdPoints,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    /// `class,dsc,hd_mm,avd` rows, one per class plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,dsc,hd_mm,avd\n");
        for c in &self.per_class {
            s += &format!("{},{:.6},{},{}\n", c.name, c.dsc, fmt_opt(c.hd_mm), fmt_opt(c.avd));
        }
        s += &format!(
            "mean,{:.6},{},{}\n",
            self.mean_dsc,
            fmt_opt(self.mean_hd_mm),
            fmt_opt(self.mean_avd)
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One wide row grouped by metric: Dice, HD and AVD for each class.
    pub fn table(&self) -> String {
        let names: Vec<&str> = self.per_class.iter().map(|c| c.name.as_str()).collect();
        let mut header = String::new();
        let mut row = String::new();
        let groups: [(&str, Box<dyn Fn(&ClassMetrics) -> String>); 3] = [
            ("Dice", Box::new(|c| format!("{:.4}", c.dsc))),
            ("HD", Box::new(|c| c.hd_mm.map_or("-".into(), |v| format!("{v:.4}")))),
            ("AVD", Box::new(|c| c.avd.map_or("-".into(), |v| format!("{v:.4}")))),
        ];
        for (metric, f) in &groups {
            for (c, n) in self.per_class.iter().zip(&names) {
                header += &format!("{:>12}", format!("{metric} {n}"));
                row += &format!("{:>12}", f(c));
            }
        }
        format!("{header}\n{row}\n")
    }
}

fn mean(vals: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = vals.iter().copied().collect();
    v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Metrics for CSF, GM and WM; undefined values are reported in-band.
pub fn evaluate(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    evaluate_with(pred, truth, HdPoints::Boundary)
}

pub fn evaluate_with(pred: &LabelVolume, truth: &LabelVolume, mode: HdPoints) -> Result<MetricsReport> {
    check(pred, truth)?;
    let per_class: Vec<ClassMetrics> = TISSUE_CLASSES
        .par_iter()
        .map(|&c| -> Result<ClassMetrics> {
            let defined = |r: Result<f64>| match r {
                Ok(v) => Ok(Some(v)),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(e),
            };
            Ok(ClassMetrics {
                label: c,
                name: truth.class_name(c),
                dsc: dsc(pred, truth, c)?,
                hd_mm: defined(hausdorff_with(pred, truth, c, mode))?,
                avd: defined(avd(pred, truth, c))?,
            })
        })
        .collect::<Result<_>>()?;
    let mean_dsc = per_class.iter().map(|c| c.dsc).sum::<f64>() / per_class.len() as f64;
    let hd: Vec<_> = per_class.iter().map(|c| c.hd_mm).collect();
    let av: Vec<_> = per_class.iter().map(|c| c.avd).collect();
    Ok(MetricsReport {
        mean_dsc,
        mean_hd_mm: mean(&hd),
        mean_avd: mean(&av),
        per_class,
        hd_points: mode,
    })
}
