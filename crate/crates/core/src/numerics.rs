//! Finite-difference operators on node-centred lattices and the Neumann
//! Poisson solver.
//!
//! First derivatives use second-order central differences in the interior
//! and second-order one-sided differences on the boundary. The Laplacian is
//! the compact 5/7-point stencil with mirror ghosts on the boundary, which
//! is the operator the Poisson solver inverts.

use crate::error::{Error, Result};
use crate::field::{DiffeoMap, LatticeGeometry, ScalarField, VectorField};
use crate::spectral::{self, AxisBc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Central2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryScheme {
    OneSided2,
}

/// Declared discretization. Fixed for now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StencilConfig {
    pub scheme: Scheme,
    pub boundary: BoundaryScheme,
}

impl Default for StencilConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Central2,
            boundary: BoundaryScheme::OneSided2,
        }
    }
}

impl StencilConfig {
    pub fn order(&self) -> usize {
        match (self.scheme, self.boundary) {
            (Scheme::Central2, BoundaryScheme::OneSided2) => 2,
        }
    }
}

/// `d values / d x_axis` at every node.
pub fn partial(values: &[f64], geom: &LatticeGeometry, axis: usize) -> Vec<f64> {
    let n = geom.dims3()[axis];
    let st = geom.strides()[axis];
    let inv2h = 0.5 / geom.spacing3()[axis];
    (0..values.len())
        .map(|l| {
            let i = geom.coords(l)[axis];
            if i == 0 {
                (-3.0 * values[l] + 4.0 * values[l + st] - values[l + 2 * st]) * inv2h
            } else if i + 1 == n {
                (3.0 * values[l] - 4.0 * values[l - st] + values[l - 2 * st]) * inv2h
            } else {
                (values[l + st] - values[l - st]) * inv2h
            }
        })
        .collect()
}

pub fn gradient(w: &ScalarField) -> VectorField {
    let g = w.geometry();
    let comps = (0..g.ndim()).map(|a| partial(w.values(), g, a)).collect();
    VectorField::new(g.clone(), comps).expect("gradient of a finite field is finite")
}

pub fn divergence(u: &VectorField) -> ScalarField {
    let g = u.geometry();
    let mut out = vec![0.0; g.len()];
    for a in 0..g.ndim() {
        for (o, d) in out.iter_mut().zip(partial(u.component(a), g, a)) {
            *o += d;
        }
    }
    ScalarField::new(g.clone(), out).expect("divergence of a finite field is finite")
}

/// Scalar curl in 2D, vector curl in 3D.
#[derive(Debug, Clone, PartialEq)]
pub enum Curl {
    Scalar(ScalarField),
    Vector(VectorField),
}

impl Curl {
    /// The scalar curl, or the Euclidean magnitude of the vector curl.
    pub fn magnitude(&self) -> ScalarField {
        match self {
            Curl::Scalar(s) => s.clone(),
            Curl::Vector(v) => v.magnitude(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Curl::Scalar(s) => s.max_abs(),
            Curl::Vector(v) => v.max_norm(),
        }
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        match self {
            Curl::Scalar(s) => s.geometry(),
            Curl::Vector(v) => v.geometry(),
        }
    }
}

pub fn curl(u: &VectorField) -> Curl {
    let g = u.geometry();
    let d = |comp: usize, axis: usize| partial(u.component(comp), g, axis);
    let sub = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x - y).collect() };
    if g.ndim() == 2 {
        let c = sub(d(1, 0), d(0, 1));
        Curl::Scalar(ScalarField::new(g.clone(), c).expect("finite"))
    } else {
        let cx = sub(d(2, 1), d(1, 2));
        let cy = sub(d(0, 2), d(2, 0));
        let cz = sub(d(1, 0), d(0, 1));
        Curl::Vector(VectorField::new(g.clone(), vec![cx, cy, cz]).expect("finite"))
    }
}

/// Compact Laplacian; boundary nodes use mirror ghosts (homogeneous
/// Neumann).
pub fn laplacian(w: &ScalarField) -> ScalarField {
    let g = w.geometry();
    let bcs = vec![AxisBc::Neumann; g.ndim()];
    ScalarField::new(g.clone(), spectral::apply_laplacian(w.values(), g, &bcs))
        .expect("laplacian of a finite field is finite")
}

/// Finite-difference Jacobian matrix `d phi_a / d xi_b` at the centre of
/// the cell whose lowest corner is `cell`.
pub fn cell_jacobian(phi: &DiffeoMap, cell: [usize; 3]) -> [[f64; 3]; 3] {
    let g = phi.geometry();
    let ndim = g.ndim();
    let h = g.spacing3();
    let strides = g.strides();
    let base = g.index(cell);
    let scale = 1.0 / (1usize << (ndim - 1)) as f64;
    let mut m = [[0.0; 3]; 3];
    for corner in 0..(1usize << ndim) {
        let mut l = base;
        for a in 0..ndim {
            if (corner >> a) & 1 == 1 {
                l += strides[a];
            }
        }
        for b in 0..ndim {
            let s = if (corner >> b) & 1 == 1 { 1.0 } else { -1.0 };
            for (a, row) in m.iter_mut().enumerate().take(ndim) {
                row[b] += s * phi.positions()[a][l] * scale / h[b];
            }
        }
    }
    if ndim == 2 {
        m[2][2] = 1.0;
    }
    m
}

pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Jacobian determinant at cell centres. The result lives on the cell
/// lattice (`dims - 1` nodes per axis, origin shifted half a cell).
pub fn jacobian_determinant(phi: &DiffeoMap) -> ScalarField {
    let g = phi.geometry();
    let cells = g.cells();
    let values = (0..cells.len())
        .map(|c| det3(&cell_jacobian(phi, cells.coords(c))))
        .collect();
    ScalarField::new(cells, values).expect("determinant of a finite map is finite")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoissonMethod {
    /// Cosine-transform direct solve.
    Spectral,
    /// Successive over-relaxation; `omega = None` picks the optimal value
    /// for the model problem.
    Sor { omega: Option<f64>, max_iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonConfig {
    pub method: PoissonMethod,
    /// Required `max |L w - (rhs - mean)| / max |rhs|`.
    pub rel_tol: f64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            method: PoissonMethod::Spectral,
            rel_tol: 1e-8,
        }
    }
}

/// Solves `L w = rhs - mean(rhs)` with homogeneous Neumann walls, where
/// `L` is [`laplacian`] and the mean is the trapezoidal average (the
/// solvability condition of the discrete problem). The returned potential
/// has zero arithmetic mean.
pub fn solve_poisson_neumann(rhs: &ScalarField) -> Result<ScalarField> {
    solve_poisson_neumann_with(rhs, &PoissonConfig::default())
}

pub fn solve_poisson_neumann_with(rhs: &ScalarField, cfg: &PoissonConfig) -> Result<ScalarField> {
    let g = rhs.geometry();
    let scale = rhs.max_abs();
    if scale == 0.0 {
        return Ok(ScalarField::constant(g.clone(), 0.0));
    }
    let mean = rhs.integral() / g.domain_measure();
    let centred: Vec<f64> = rhs.values().iter().map(|v| v - mean).collect();
    let bcs = vec![AxisBc::Neumann; g.ndim()];

    let (mut w, iterations) = match cfg.method {
        PoissonMethod::Spectral => (spectral::solve_shifted(&centred, g, &bcs, 0.0), 1),
        PoissonMethod::Sor { omega, max_iters } => {
            sor_neumann(&centred, g, omega, max_iters, cfg.rel_tol * scale).map_err(|e| match e {
                Error::Convergence { iterations, residual } => Error::Convergence {
                    iterations,
                    residual: residual / scale,
                },
                e => e,
            })?
        }
    };

    let wm = w.iter().sum::<f64>() / w.len() as f64;
    for v in &mut w {
        *v -= wm;
    }
    let residual = residual_max(&w, &centred, g) / scale;
    if !(residual <= cfg.rel_tol) {
        return Err(Error::Convergence {
            iterations,
            residual,
        });
    }
    ScalarField::new(g.clone(), w)
}

fn residual_max(w: &[f64], rhs: &[f64], g: &LatticeGeometry) -> f64 {
    let bcs = vec![AxisBc::Neumann; g.ndim()];
    spectral::apply_laplacian(w, g, &bcs)
        .iter()
        .zip(rhs)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

fn sor_neumann(
    rhs: &[f64],
    g: &LatticeGeometry,
    omega: Option<f64>,
    max_iters: usize,
    abs_tol: f64,
) -> Result<(Vec<f64>, usize)> {
    let ndim = g.ndim();
    let dims = g.dims3();
    let strides = g.strides();
    let inv_h2: Vec<f64> = g.spacing().iter().map(|h| 1.0 / (h * h)).collect();
    let diag: f64 = 2.0 * inv_h2.iter().sum::<f64>();
    let nmax = *g.dims().iter().max().unwrap() as f64;
    let omega = omega.unwrap_or(2.0 / (1.0 + (std::f64::consts::PI / nmax).sin()));
    let mut w = vec![0.0; rhs.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        for l in 0..w.len() {
            let idx = g.coords(l);
            let mut nb = 0.0;
            for a in 0..ndim {
                let st = strides[a];
                let lo = if idx[a] == 0 { w[l + st] } else { w[l - st] };
                let hi = if idx[a] + 1 == dims[a] { w[l - st] } else { w[l + st] };
                nb += (lo + hi) * inv_h2[a];
            }
            let gs = (nb - rhs[l]) / diag;
            w[l] += omega * (gs - w[l]);
        }
        if it % 10 == 0 || it == max_iters {
            residual = residual_max(&w, rhs, g);
            if residual <= abs_tol {
                return Ok((w, it));
            }
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual,
    })
}
