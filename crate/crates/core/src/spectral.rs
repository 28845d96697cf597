//! Real-to-real trigonometric transforms (DCT-I, DST-I) built on FFTs, and
//! fast solvers for the compact 5/7-point Laplacian on a box.
//!
//! A `Neumann` axis uses the mirror-ghost boundary stencil, which DCT-I
//! diagonalizes over all nodes. A `Dirichlet` axis pins its two end nodes
//! to zero and is diagonalized by DST-I over the interior nodes.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::field::LatticeGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisBc {
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Dct1,
    Dst1,
}

/// Unnormalized DCT-I or DST-I along lines of length `n`, computed with an
/// FFT of length `2 (n - 1)`. Applying either transform twice scales by
/// `2 (n - 1)`.
struct LineTransform {
    kind: Kind,
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl LineTransform {
    fn new(kind: Kind, n: usize, planner: &mut FftPlanner<f64>) -> Self {
        let fft = planner.plan_fft_forward(2 * (n - 1));
        Self { kind, n, fft }
    }

    /// Transforms `line` in place. For DST-I the first and last entries
    /// are treated as zero and left at zero.
    fn apply(&self, line: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let n = self.n;
        let big = 2 * (n - 1);
        buf.clear();
        buf.resize(big, Complex::new(0.0, 0.0));
        match self.kind {
            Kind::Dct1 => {
                for j in 0..n {
                    buf[j].re = line[j];
                }
                for j in 1..n - 1 {
                    buf[big - j].re = line[j];
                }
                self.fft.process(buf);
                for m in 0..n {
                    line[m] = buf[m].re;
                }
            }
            Kind::Dst1 => {
                for j in 1..n - 1 {
                    buf[j].re = line[j];
                    buf[big - j].re = -line[j];
                }
                self.fft.process(buf);
                line[0] = 0.0;
                line[n - 1] = 0.0;
                for m in 1..n - 1 {
                    line[m] = -buf[m].im;
                }
            }
        }
    }
}

/// Applies the per-axis transform to every line of `data`.
fn transform_axis(data: &mut [f64], dims: [usize; 3], axis: usize, t: &LineTransform) {
    let n = dims[axis];
    let strides = [1, dims[0], dims[0] * dims[1]];
    let stride = strides[axis];
    let total: usize = dims.iter().product();
    let n_lines = total / n;
    // starting offsets of every line along `axis`
    let starts: Vec<usize> = (0..total)
        .filter(|&l| (l / stride) % n == 0)
        .collect();
    debug_assert_eq!(starts.len(), n_lines);

    let mut lines = vec![0.0; total];
    for (k, &s) in starts.iter().enumerate() {
        for j in 0..n {
            lines[k * n + j] = data[s + j * stride];
        }
    }
    lines.par_chunks_mut(n).for_each_init(Vec::new, |buf, line| {
        t.apply(line, buf);
    });
    for (k, &s) in starts.iter().enumerate() {
        for j in 0..n {
            data[s + j * stride] = lines[k * n + j];
        }
    }
}

/// Eigenvalue of the 1D compact second difference for mode `m`.
fn eigen_1d(m: usize, n: usize, h: f64) -> f64 {
    let theta = std::f64::consts::PI * m as f64 / (n - 1) as f64;
    (2.0 * theta.cos() - 2.0) / (h * h)
}

/// Solves `(L - shift) x = rhs` where `L` is the compact Laplacian with the
/// given per-axis boundary conditions. With `shift == 0` and all-Neumann
/// axes the constant mode is dropped, returning the solution whose
/// trapezoid-weighted mean is zero (the rhs is implicitly projected onto
/// the compatible subspace). On Dirichlet axes the end nodes of the result
/// are zero and the corresponding rhs entries are ignored.
pub fn solve_shifted(rhs: &[f64], geom: &LatticeGeometry, bcs: &[AxisBc], shift: f64) -> Vec<f64> {
    let ndim = geom.ndim();
    assert_eq!(bcs.len(), ndim);
    assert_eq!(rhs.len(), geom.len());
    let dims = geom.dims3();
    let h = geom.spacing3();
    let mut planner = FftPlanner::new();
    let transforms: Vec<LineTransform> = (0..ndim)
        .map(|a| {
            let kind = match bcs[a] {
                AxisBc::Neumann => Kind::Dct1,
                AxisBc::Dirichlet => Kind::Dst1,
            };
            LineTransform::new(kind, dims[a], &mut planner)
        })
        .collect();

    let mut data = rhs.to_vec();
    for (a, t) in transforms.iter().enumerate() {
        transform_axis(&mut data, dims, a, t);
    }

    let eig: Vec<Vec<f64>> = (0..ndim)
        .map(|a| (0..dims[a]).map(|m| eigen_1d(m, dims[a], h[a])).collect())
        .collect();
    let mut norm = 1.0;
    for a in 0..ndim {
        norm *= 2.0 * (dims[a] - 1) as f64;
    }
    data.par_iter_mut().enumerate().for_each(|(l, v)| {
        let i = l % dims[0];
        let rest = l / dims[0];
        let idx = [i, rest % dims[1], rest / dims[1]];
        let mut lambda = -shift;
        for a in 0..ndim {
            if bcs[a] == AxisBc::Dirichlet && (idx[a] == 0 || idx[a] + 1 == dims[a]) {
                *v = 0.0;
                return;
            }
            lambda += eig[a][idx[a]];
        }
        if lambda == 0.0 {
            *v = 0.0;
        } else {
            *v /= lambda * norm;
        }
    });

    for (a, t) in transforms.iter().enumerate() {
        transform_axis(&mut data, dims, a, t);
    }
    data
}

/// Compact Laplacian with per-axis boundary handling: mirror ghosts on
/// Neumann axes, zero values beyond Dirichlet end nodes. Dirichlet end
/// nodes themselves get 0.
pub fn apply_laplacian(values: &[f64], geom: &LatticeGeometry, bcs: &[AxisBc]) -> Vec<f64> {
    let ndim = geom.ndim();
    let dims = geom.dims3();
    let h = geom.spacing3();
    let strides = geom.strides();
    (0..values.len())
        .into_par_iter()
        .map(|l| {
            let idx = geom.coords(l);
            let mut s = 0.0;
            for a in 0..ndim {
                let n = dims[a];
                let i = idx[a];
                let st = strides[a];
                let inv = 1.0 / (h[a] * h[a]);
                match bcs[a] {
                    AxisBc::Neumann => {
                        let lo = if i == 0 { values[l + st] } else { values[l - st] };
                        let hi = if i + 1 == n { values[l - st] } else { values[l + st] };
                        s += (lo - 2.0 * values[l] + hi) * inv;
                    }
                    AxisBc::Dirichlet => {
                        if i == 0 || i + 1 == n {
                            return 0.0;
                        }
                        let lo = if i == 1 { 0.0 } else { values[l - st] };
                        let hi = if i + 2 == n { 0.0 } else { values[l + st] };
                        s += (lo - 2.0 * values[l] + hi) * inv;
                    }
                }
            }
            s
        })
        .collect()
}
