//! Intensity preprocessing: Gaussian-smoothed image subtraction, z-score
//! normalization inside a brain mask, and slice-wise CLAHE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{LabelVolume, LatticeGeometry, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Gaussian standard deviation in mm.
    pub gaussian_sigma: f64,
    /// CLAHE tiles per in-plane axis.
    pub clahe_tiles: usize,
    /// CLAHE clip limit as a fraction of the tile pixel count.
    pub clahe_clip: f64,
    /// Voxels with intensity above this belong to the brain mask.
    pub mask_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 2.0,
            clahe_tiles: 8,
            clahe_clip: 0.01,
            mask_threshold: 0.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma {} must be positive", self.gaussian_sigma)));
        }
        if self.clahe_tiles < 1 {
            return Err(Error::Parameter("CLAHE needs at least one tile".into()));
        }
        if !(self.clahe_clip > 0.0 && self.clahe_clip <= 1.0) {
            return Err(Error::Parameter(format!("CLAHE clip {} outside (0, 1]", self.clahe_clip)));
        }
        Ok(())
    }
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m >= n {
        2 * n - 1 - m
    } else {
        m
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, truncated at 3 sigma.
pub fn gaussian_kernel(sigma: f64, spacing: f64) -> Vec<f64> {
    let r = (3.0 * sigma / spacing).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| {
            let x = k as f64 * spacing;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

fn convolve_axis(values: &[f64], geom: &LatticeGeometry, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let n = geom.dims3()[axis];
    let st = geom.strides()[axis];
    let r = (kernel.len() / 2) as isize;
    (0..values.len())
        .into_par_iter()
        .map(|l| {
            let i = geom.coords(l)[axis] as isize;
            let line0 = l - i as usize * st;
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * values[line0 + reflect(i + k as isize - r, n) * st])
                .sum()
        })
        .collect()
}

/// Separable Gaussian smoothing with reflective borders.
pub fn gaussian_blur(image: &ScalarField, sigma: f64) -> Result<ScalarField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("sigma {sigma} must be positive")));
    }
    let g = image.geometry();
    let mut v = image.values().to_vec();
    for a in 0..g.ndim() {
        let k = gaussian_kernel(sigma, g.spacing()[a]);
        v = convolve_axis(&v, g, a, &k);
    }
    ScalarField::new(g.clone(), v)
}

/// `I - G_sigma * I`.
pub fn gaussian_subtract(image: &ScalarField, sigma: f64) -> Result<ScalarField> {
    let blurred = gaussian_blur(image, sigma)?;
    image.zip_with(&blurred, |a, b| a - b)
}

/// `(I - mean) / std` over voxels with a nonzero mask label; zero outside.
/// Uses the population standard deviation.
pub fn zscore(image: &ScalarField, mask: &LabelVolume) -> Result<ScalarField> {
    image.geometry().ensure_same(mask.geometry(), "zscore mask")?;
    let inside: Vec<f64> = image
        .values()
        .iter()
        .zip(mask.labels())
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v)
        .collect();
    if inside.is_empty() {
        return Err(Error::Degenerate("z-score mask is empty".into()));
    }
    let n = inside.len() as f64;
    let mean = inside.iter().sum::<f64>() / n;
    let var = inside.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std <= 1e-12 * mean.abs() {
        return Err(Error::Degenerate(format!(
            "zero intensity variance over {} mask voxels",
            inside.len()
        )));
    }
    let out = image
        .values()
        .iter()
        .zip(mask.labels())
        .map(|(&v, &m)| if m != 0 { (v - mean) / std } else { 0.0 })
        .collect();
    ScalarField::new(image.geometry().clone(), out)
}

pub const CLAHE_BINS: usize = 256;

#[inline]
fn bin_of(v: f64) -> usize {
    ((v * CLAHE_BINS as f64) as usize).min(CLAHE_BINS - 1)
}

/// Splits `n` pixels into `tiles` contiguous ranges.
fn tile_ranges(n: usize, tiles: usize) -> Vec<(usize, usize)> {
    let t = tiles.min(n).max(1);
    (0..t).map(|k| (k * n / t, (k + 1) * n / t)).collect()
}

/// Blending position of pixel `x` between tile centres: `(t0, t1, w1)`.
fn blend(x: usize, centres: &[f64]) -> (usize, usize, f64) {
    let xf = x as f64;
    let last = centres.len() - 1;
    if xf <= centres[0] {
        return (0, 0, 0.0);
    }
    if xf >= centres[last] {
        return (last, last, 0.0);
    }
    let t = centres.iter().rposition(|&c| c <= xf).unwrap();
    let w = (xf - centres[t]) / (centres[t + 1] - centres[t]);
    (t, t + 1, w)
}

/// Per-tile clipped-histogram CDF mapping; values in (0, 1].
fn tile_mapping(slice: &[f64], nx: usize, xr: (usize, usize), yr: (usize, usize), clip: f64) -> Vec<f64> {
    let mut hist = vec![0.0f64; CLAHE_BINS];
    for y in yr.0..yr.1 {
        for x in xr.0..xr.1 {
            hist[bin_of(slice[x + nx * y])] += 1.0;
        }
    }
    let count = ((xr.1 - xr.0) * (yr.1 - yr.0)) as f64;
    let limit = clip * count;
    let mut excess = 0.0;
    for h in &mut hist {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let add = excess / CLAHE_BINS as f64;
    let mut acc = 0.0;
    hist.iter()
        .map(|h| {
            acc += h + add;
            (acc / count).min(1.0)
        })
        .collect()
}

fn clahe_slice(slice: &[f64], nx: usize, ny: usize, tiles: usize, clip: f64) -> Vec<f64> {
    let xr = tile_ranges(nx, tiles);
    let yr = tile_ranges(ny, tiles);
    let cx: Vec<f64> = xr.iter().map(|&(a, b)| (a + b - 1) as f64 / 2.0).collect();
    let cy: Vec<f64> = yr.iter().map(|&(a, b)| (a + b - 1) as f64 / 2.0).collect();
    let maps: Vec<Vec<Vec<f64>>> = yr
        .iter()
        .map(|&y| xr.iter().map(|&x| tile_mapping(slice, nx, x, y, clip)).collect())
        .collect();
    let mut out = vec![0.0; nx * ny];
    for y in 0..ny {
        let (ty0, ty1, wy) = blend(y, &cy);
        for x in 0..nx {
            let (tx0, tx1, wx) = blend(x, &cx);
            let b = bin_of(slice[x + nx * y]);
            let top = (1.0 - wx) * maps[ty0][tx0][b] + wx * maps[ty0][tx1][b];
            let bottom = (1.0 - wx) * maps[ty1][tx0][b] + wx * maps[ty1][tx1][b];
            out[x + nx * y] = ((1.0 - wy) * top + wy * bottom).clamp(0.0, 1.0);
        }
    }
    out
}

/// Contrast-limited adaptive histogram equalization on every axial
/// (constant last index) slice. The volume is first rescaled to `[0, 1]`
/// with its global range; output lies in `[0, 1]`.
pub fn clahe(image: &ScalarField, cfg: &PreprocessConfig) -> Result<ScalarField> {
    cfg.validate()?;
    let g = image.geometry();
    let (lo, hi) = (image.min(), image.max());
    let scaled: Vec<f64> = if hi > lo {
        image.values().iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; image.len()]
    };
    let [nx, ny, nz] = g.dims3();
    let plane = nx * ny;
    let mut out = vec![0.0; image.len()];
    out.par_chunks_mut(plane)
        .zip(scaled.par_chunks(plane))
        .for_each(|(o, s)| o.copy_from_slice(&clahe_slice(s, nx, ny, cfg.clahe_tiles, cfg.clahe_clip)));
    debug_assert_eq!(out.len(), plane * nz);
    ScalarField::new(g.clone(), out)
}

/// Gaussian subtraction, then z-scores inside the `> mask_threshold` mask
/// of the original image, then CLAHE.
pub fn preprocess(image: &ScalarField, cfg: &PreprocessConfig) -> Result<ScalarField> {
    cfg.validate()?;
    let mask = LabelVolume::mask_from(image, cfg.mask_threshold);
    let hp = gaussian_subtract(image, cfg.gaussian_sigma)?;
    let z = zscore(&hp, &mask)?;
    clahe(&z, cfg)
}
