//! Reconstruction of a transformation from a prescribed Jacobian
//! determinant and displacement curl.
//!
//! The loss is
//!
//! ```text
//! L(φ) = ½ Σ_cells (J(φ) - jd)² + ½ Σ_cells |curl(φ - id) - c|² + (λ/2) Σ_interior |Δ(φ - id)|²
//! ```
//!
//! with `J` and `curl` taken from the cell-centred Jacobian matrix of the
//! node map. Wall nodes slide along their faces. Minimization is gradient
//! descent with an Armijo backtracking line search, where the gradient is
//! taken in the H¹ metric: each displacement component is smoothed by the
//! inverse Laplacian (Dirichlet across its own walls, Neumann along the
//! others) before stepping.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{DiffeoMap, LatticeGeometry, ScalarField, VectorField};
use crate::numerics::{self, cell_jacobian, det3, Curl};
use crate::spectral::{self, AxisBc};

#[derive(Debug, Clone)]
pub struct RecoveryProblem {
    /// Prescribed Jacobian determinant on the cell lattice.
    pub target_jd: ScalarField,
    /// Prescribed curl of the displacement on the cell lattice.
    pub target_curl: Curl,
    pub smooth_weight: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub map: DiffeoMap,
    pub loss_history: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub converged: bool,
}

impl RecoveryResult {
    pub fn iterations(&self) -> usize {
        self.loss_history.len().saturating_sub(1)
    }

    /// `iter,loss,grad_norm` rows with a header line.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,loss,grad_norm\n");
        for (i, (l, g)) in self.loss_history.iter().zip(&self.grad_norms).enumerate() {
            s.push_str(&format!("{i},{l:e},{g:e}\n"));
        }
        s
    }
}

/// Jacobian determinant and displacement curl of `map` at cell centres,
/// using the same stencil as the recovery loss.
pub fn cell_targets(map: &DiffeoMap) -> (ScalarField, Curl) {
    let g = map.geometry();
    let cells = g.cells();
    let mats: Vec<[[f64; 3]; 3]> = (0..cells.len())
        .map(|c| cell_jacobian(map, cells.coords(c)))
        .collect();
    let jd = ScalarField::new(cells.clone(), mats.iter().map(det3).collect()).expect("finite");
    let curl = if g.ndim() == 2 {
        Curl::Scalar(
            ScalarField::new(cells, mats.iter().map(|m| m[1][0] - m[0][1]).collect())
                .expect("finite"),
        )
    } else {
        let comps = vec![
            mats.iter().map(|m| m[2][1] - m[1][2]).collect(),
            mats.iter().map(|m| m[0][2] - m[2][0]).collect(),
            mats.iter().map(|m| m[1][0] - m[0][1]).collect(),
        ];
        Curl::Vector(VectorField::new(cells, comps).expect("finite"))
    };
    (jd, curl)
}

/// Node lattice whose cell lattice is `cells`.
fn node_lattice(cells: &LatticeGeometry) -> Result<LatticeGeometry> {
    let dims: Vec<usize> = cells.dims().iter().map(|d| d + 1).collect();
    let origin: Vec<f64> = cells
        .origin()
        .iter()
        .zip(cells.spacing())
        .map(|(o, h)| o - 0.5 * h)
        .collect();
    LatticeGeometry::new(&dims, cells.spacing(), &origin)
}

impl RecoveryProblem {
    pub fn new(target_jd: ScalarField, target_curl: Curl) -> Self {
        Self {
            target_jd,
            target_curl,
            smooth_weight: 1e-3,
            max_iters: 2000,
            step_size: 0.1,
            tol: 1e-8,
        }
    }

    /// Targets computed from a known map.
    pub fn from_map(map: &DiffeoMap) -> Self {
        let (jd, curl) = cell_targets(map);
        Self::new(jd, curl)
    }

    /// Lattice of the unknown map.
    pub fn node_geometry(&self) -> Result<LatticeGeometry> {
        node_lattice(self.target_jd.geometry())
    }

    fn validate(&self) -> Result<()> {
        let cg = self.target_jd.geometry();
        cg.ensure_same(self.target_curl.geometry(), "recovery targets")?;
        match (&self.target_curl, cg.ndim()) {
            (Curl::Scalar(_), 2) | (Curl::Vector(_), 3) => {}
            _ => {
                return Err(Error::Geometry(
                    "curl target must be scalar in 2D and a vector in 3D".into(),
                ))
            }
        }
        if !(self.smooth_weight >= 0.0) {
            return Err(Error::Parameter("smooth_weight must be non-negative".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Parameter("step_size must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Parameter("tol must be non-negative".into()));
        }
        Ok(())
    }

    /// Loss and its Euclidean gradient with respect to every node
    /// coordinate of `map`.
    pub fn loss_and_gradient(&self, map: &DiffeoMap) -> (f64, Vec<Vec<f64>>) {
        Objective::new(self, map.geometry()).eval(map.positions(), true)
    }

    pub fn loss(&self, map: &DiffeoMap) -> f64 {
        Objective::new(self, map.geometry()).eval(map.positions(), false).0
    }
}

/// Loss evaluation over positions stored relative to the lattice origin.
struct Objective<'a> {
    problem: &'a RecoveryProblem,
    geom: LatticeGeometry,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a RecoveryProblem, geom: &LatticeGeometry) -> Self {
        Self {
            problem,
            geom: geom.clone(),
        }
    }

    fn eval(&self, pos: &[Vec<f64>], want_grad: bool) -> (f64, Vec<Vec<f64>>) {
        let g = &self.geom;
        let ndim = g.ndim();
        let h = g.spacing3();
        let strides = g.strides();
        let cells = g.cells();
        let ncorner = 1usize << ndim;
        let scale = 1.0 / (1usize << (ndim - 1)) as f64;
        let jd = self.problem.target_jd.values();
        let mut grad = if want_grad {
            vec![vec![0.0; g.len()]; ndim]
        } else {
            Vec::new()
        };
        let mut loss = 0.0;

        for c in 0..cells.len() {
            let base = g.index(cells.coords(c));
            let mut corners = [0usize; 8];
            let mut m = [[0.0; 3]; 3];
            for (corner, slot) in corners.iter_mut().enumerate().take(ncorner) {
                let mut l = base;
                for a in 0..ndim {
                    if (corner >> a) & 1 == 1 {
                        l += strides[a];
                    }
                }
                *slot = l;
                for b in 0..ndim {
                    let s = if (corner >> b) & 1 == 1 { scale } else { -scale };
                    for (a, row) in m.iter_mut().enumerate().take(ndim) {
                        row[b] += s * pos[a][l] / h[b];
                    }
                }
            }
            if ndim == 2 {
                m[2][2] = 1.0;
            }
            let rj = det3(&m) - jd[c];
            loss += 0.5 * rj * rj;

            // dL/dA accumulated here
            let mut ga = [[0.0; 3]; 3];
            if want_grad {
                let cof = cofactor(&m);
                for a in 0..3 {
                    for b in 0..3 {
                        ga[a][b] = rj * cof[a][b];
                    }
                }
            }
            match &self.problem.target_curl {
                Curl::Scalar(tc) => {
                    let rc = m[1][0] - m[0][1] - tc.values()[c];
                    loss += 0.5 * rc * rc;
                    ga[1][0] += rc;
                    ga[0][1] -= rc;
                }
                Curl::Vector(tc) => {
                    let r = [
                        m[2][1] - m[1][2] - tc.component(0)[c],
                        m[0][2] - m[2][0] - tc.component(1)[c],
                        m[1][0] - m[0][1] - tc.component(2)[c],
                    ];
                    loss += 0.5 * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
                    ga[2][1] += r[0];
                    ga[1][2] -= r[0];
                    ga[0][2] += r[1];
                    ga[2][0] -= r[1];
                    ga[1][0] += r[2];
                    ga[0][1] -= r[2];
                }
            }
            if want_grad {
                for (corner, &l) in corners.iter().enumerate().take(ncorner) {
                    for b in 0..ndim {
                        let s = if (corner >> b) & 1 == 1 { scale } else { -scale } / h[b];
                        for a in 0..ndim {
                            grad[a][l] += ga[a][b] * s;
                        }
                    }
                }
            }
        }

        let lambda = self.problem.smooth_weight;
        if lambda > 0.0 {
            let dims = g.dims3();
            let inv_h2: Vec<f64> = (0..ndim).map(|b| 1.0 / (h[b] * h[b])).collect();
            let centre: f64 = -2.0 * inv_h2.iter().sum::<f64>();
            for l in 0..g.len() {
                let idx = g.coords(l);
                if (0..ndim).any(|b| idx[b] == 0 || idx[b] + 1 == dims[b]) {
                    continue;
                }
                for comp in pos.iter().take(ndim).enumerate() {
                    let (a, p) = comp;
                    let mut r = centre * p[l];
                    for b in 0..ndim {
                        r += (p[l - strides[b]] + p[l + strides[b]]) * inv_h2[b];
                    }
                    loss += 0.5 * lambda * r * r;
                    if want_grad {
                        grad[a][l] += lambda * r * centre;
                        for b in 0..ndim {
                            grad[a][l - strides[b]] += lambda * r * inv_h2[b];
                            grad[a][l + strides[b]] += lambda * r * inv_h2[b];
                        }
                    }
                }
            }
        }
        (loss, grad)
    }

    fn is_wall(&self, comp: usize, l: usize) -> bool {
        let i = self.geom.coords(l)[comp];
        i == 0 || i + 1 == self.geom.dims3()[comp]
    }

    /// Zeroes wall-normal components on wall nodes.
    fn project(&self, v: &mut [Vec<f64>]) {
        for (a, comp) in v.iter_mut().enumerate() {
            for (l, x) in comp.iter_mut().enumerate() {
                if self.is_wall(a, l) {
                    *x = 0.0;
                }
            }
        }
    }

    /// H¹ descent direction: for each component, `(-L)^{-1} (W^{-1} g)`
    /// with `L` the compact Laplacian (Dirichlet across the component's own
    /// walls, Neumann elsewhere) and `W` the trapezoid weights of the
    /// Neumann axes, which makes the operator symmetric positive definite.
    fn precondition(&self, grad: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = &self.geom;
        let ndim = g.ndim();
        let dims = g.dims3();
        grad.iter()
            .enumerate()
            .map(|(a, comp)| {
                let bcs: Vec<AxisBc> = (0..ndim)
                    .map(|b| if b == a { AxisBc::Dirichlet } else { AxisBc::Neumann })
                    .collect();
                let scaled: Vec<f64> = comp
                    .iter()
                    .enumerate()
                    .map(|(l, &v)| {
                        let idx = g.coords(l);
                        let mut w = 1.0;
                        for b in 0..ndim {
                            if b != a && (idx[b] == 0 || idx[b] + 1 == dims[b]) {
                                w *= 0.5;
                            }
                        }
                        v / w
                    })
                    .collect();
                spectral::solve_shifted(&scaled, g, &bcs, 0.0)
            })
            .collect()
    }
}

fn cofactor(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for (i, row) in c.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
            let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
            *v = m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1];
        }
    }
    c
}

fn dot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Runs the descent from the identity map.
pub fn recover(problem: &RecoveryProblem) -> Result<RecoveryResult> {
    let geom = problem.node_geometry()?;
    recover_from(problem, &DiffeoMap::identity(geom))
}

/// Runs the descent from `start`.
pub fn recover_from(problem: &RecoveryProblem, start: &DiffeoMap) -> Result<RecoveryResult> {
    problem.validate()?;
    let geom = problem.node_geometry()?;
    geom.ensure_same(start.geometry(), "recovery start map")?;
    let cells = problem.target_jd.geometry();
    let jd_total = problem.target_jd.values().iter().sum::<f64>() * cells.cell_measure();
    let measure = geom.domain_measure();
    if ((jd_total - measure) / measure).abs() > 1e-6 {
        warn!(
            "target Jacobian integrates to {jd_total}, domain measure is {measure}; recovering anyway"
        );
    }

    // positions relative to the origin
    let rel_geom = geom.with_origin(&vec![0.0; geom.ndim()])?;
    let origin = geom.origin3();
    let mut pos: Vec<Vec<f64>> = start
        .positions()
        .iter()
        .enumerate()
        .map(|(a, c)| c.iter().map(|p| p - origin[a]).collect())
        .collect();
    let obj = Objective::new(problem, &rel_geom);

    let (mut loss, mut grad) = obj.eval(&pos, true);
    obj.project(&mut grad);
    let mut loss_history = vec![loss];
    let mut grad_norms = vec![dot(&grad, &grad).sqrt()];
    let mut step = problem.step_size;
    let mut converged = loss == 0.0;

    for iter in 1..=problem.max_iters {
        if converged {
            break;
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss} at iteration {iter}")));
        }
        let mut dir = obj.precondition(&grad);
        obj.project(&mut dir);
        let slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            return Err(Error::Stall {
                iteration: iter,
                loss,
                grad_norm: grad_norms[grad_norms.len() - 1],
            });
        }

        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<Vec<f64>> = pos
                .iter()
                .zip(&dir)
                .map(|(p, d)| p.iter().zip(d).map(|(x, y)| x + alpha * y).collect())
                .collect();
            let (trial_loss, _) = obj.eval(&trial, false);
            if trial_loss.is_finite() && trial_loss <= loss + ARMIJO * alpha * slope {
                accepted = Some((trial, trial_loss));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, trial_loss)) = accepted else {
            if loss <= f64::EPSILON * loss_history[0] {
                converged = true;
                break;
            }
            return Err(Error::Stall {
                iteration: iter,
                loss,
                grad_norm: grad_norms[grad_norms.len() - 1],
            });
        };
        step = alpha * 2.0;
        pos = trial;
        let prev = loss;
        (loss, grad) = obj.eval(&pos, true);
        debug_assert!((loss - trial_loss).abs() <= 1e-12 * trial_loss.max(1e-300));
        obj.project(&mut grad);
        loss_history.push(loss);
        grad_norms.push(dot(&grad, &grad).sqrt());
        if loss == 0.0 || (prev - loss) <= problem.tol * prev {
            converged = true;
        }
    }

    let positions = pos
        .into_iter()
        .enumerate()
        .map(|(a, c)| c.into_iter().map(|p| p + origin[a]).collect())
        .collect();
    Ok(RecoveryResult {
        map: DiffeoMap::new(geom, positions)?,
        loss_history,
        grad_norms,
        converged,
    })
}

/// Identity plus a smooth random displacement built from low-order sine
/// modes. Component `a` vanishes on the walls normal to axis `a`, so wall
/// nodes slide along their faces. `amplitude` is the largest displacement
/// per component as a fraction of that axis' extent.
pub fn synthesize_t0(geometry: &LatticeGeometry, amplitude: f64, seed: u64) -> Result<DiffeoMap> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::Parameter(format!("amplitude {amplitude} must be non-negative")));
    }
    let ndim = geometry.ndim();
    if amplitude == 0.0 {
        return Ok(DiffeoMap::identity(geometry.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const MAX_MODE: usize = 2;
    // (mode numbers, coefficient) per component
    let mut modes: Vec<Vec<([usize; 3], f64)>> = Vec::new();
    for _ in 0..ndim {
        let mut list = Vec::new();
        let counts = [MAX_MODE + 1; 3];
        for k0 in 0..counts[0] {
            for k1 in 0..counts[1] {
                for k2 in 0..if ndim == 3 { counts[2] } else { 1 } {
                    list.push(([k0, k1, k2], rng.gen_range(-1.0..1.0)));
                }
            }
        }
        modes.push(list);
    }
    let origin = geometry.origin3();
    let extent: Vec<f64> = (0..ndim).map(|a| geometry.extent(a)).collect();
    let mut disp: Vec<Vec<f64>> = vec![vec![0.0; geometry.len()]; ndim];
    for l in 0..geometry.len() {
        let p = geometry.node_position(geometry.coords(l));
        let xhat: Vec<f64> = (0..ndim).map(|b| (p[b] - origin[b]) / extent[b]).collect();
        for a in 0..ndim {
            let mut v = 0.0;
            for (k, c) in &modes[a] {
                // sine across the component's own axis needs mode >= 1
                let mut term = *c;
                for b in 0..ndim {
                    let arg = std::f64::consts::PI * xhat[b];
                    term *= if b == a {
                        ((k[b] + 1) as f64 * arg).sin()
                    } else {
                        (k[b] as f64 * arg).cos()
                    };
                }
                v += term;
            }
            disp[a][l] = v;
        }
    }
    for (a, d) in disp.iter_mut().enumerate() {
        let peak = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            let s = amplitude * extent[a] / peak;
            for v in d.iter_mut() {
                *v *= s;
            }
        }
    }
    let map = DiffeoMap::from_displacement(&VectorField::new(geometry.clone(), disp)?);
    let jd = numerics::jacobian_determinant(&map);
    if jd.min() <= 0.0 {
        return Err(Error::Parameter(format!(
            "amplitude {amplitude} folds the synthetic map (min Jacobian {:e})",
            jd.min()
        )));
    }
    Ok(map)
}
