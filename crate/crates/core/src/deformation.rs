//! Deformation-method grid generation.
//!
//! Given a positive monitor `f1` with `∫ 1/f1 = |Ω|`, the monitor is
//! interpolated in time as `1/f(x,t) = (1 - t) + t / f1(x)`. The velocity
//! `u = ∇w` solves `Δw = 1 - 1/f1` with homogeneous Neumann walls, and the
//! map flows along `dφ/dt = f(φ,t) u(φ)` from the identity at `t = 0`. At
//! `t = 1` the Jacobian determinant of `φ` equals `f1(φ)`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{DiffeoMap, LatticeGeometry, LinearStencil, ScalarField, VectorField};
use crate::numerics::{self, PoissonConfig};

/// Weights of the brightness and gradient terms of an image monitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSpec {
    pub alpha: f64,
    pub beta: f64,
    /// Lower clamp applied before normalization.
    pub floor: f64,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            floor: 0.1,
        }
    }
}

impl MonitorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Parameter("monitor weights must be non-negative".into()));
        }
        if !(self.alpha + self.beta > 0.0) {
            return Err(Error::Parameter(
                "alpha + beta must be positive; use normalize_monitor for explicit targets".into(),
            ));
        }
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return Err(Error::Parameter(format!(
                "monitor floor {} outside (0, 1]",
                self.floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(Error::Parameter(format!("unknown integrator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationConfig {
    pub time_steps: usize,
    pub integrator: Integrator,
    /// Starting map; identity when `None`.
    pub initial_map: Option<DiffeoMap>,
    pub poisson: PoissonConfig,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        Self {
            time_steps: 100,
            integrator: Integrator::Rk4,
            initial_map: None,
            poisson: PoissonConfig::default(),
        }
    }
}

/// Rescales `1/raw` so its trapezoidal integral is the box measure. `raw`
/// must be positive.
pub fn normalize_monitor(raw: &ScalarField) -> Result<ScalarField> {
    if let Some(v) = raw.values().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidInput(format!("monitor value {v} is not positive")));
    }
    let g = raw.geometry();
    let inv = raw.map(|v| 1.0 / v)?;
    let c = g.domain_measure() / inv.integral();
    raw.map(|v| v / c)
}

fn unit_range(f: &ScalarField) -> Result<ScalarField> {
    let (lo, hi) = (f.min(), f.max());
    if hi > lo {
        f.map(|v| (v - lo) / (hi - lo))
    } else {
        Ok(ScalarField::constant(f.geometry().clone(), 0.0))
    }
}

/// Monitor from image brightness and gradient magnitude:
/// `raw = 1 / (1 + alpha Î + beta |∇Î|/max|∇Î|)`, clamped below by
/// `floor`, then normalized with [`normalize_monitor`]. `Î` is the image
/// rescaled to `[0, 1]`.
pub fn monitor_from_image(image: &ScalarField, spec: &MonitorSpec) -> Result<ScalarField> {
    spec.validate()?;
    let bright = unit_range(image)?;
    let grad = numerics::gradient(&bright).magnitude();
    let gmax = grad.max();
    let g = image.geometry();
    let raw: Vec<f64> = bright
        .values()
        .iter()
        .zip(grad.values())
        .map(|(&b, &gm)| {
            let gn = if gmax > 0.0 { gm / gmax } else { 0.0 };
            (1.0 / (1.0 + spec.alpha * b + spec.beta * gn)).max(spec.floor)
        })
        .collect();
    normalize_monitor(&ScalarField::new(g.clone(), raw)?)
}

/// `1/f(x,t)` under the linear-in-time schedule.
pub fn inverse_monitor_at(f1: &ScalarField, t: f64) -> Result<ScalarField> {
    f1.map(|v| (1.0 - t) + t / v)
}

fn check_monitor(f1: &ScalarField) -> Result<()> {
    if let Some(v) = f1.values().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidInput(format!("monitor value {v} is not positive")));
    }
    let g = f1.geometry();
    let measure = g.domain_measure();
    let integral = f1.map(|v| 1.0 / v)?.integral();
    let rel = ((integral - measure) / measure).abs();
    if rel > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "monitor violates the volume constraint: ∫1/f1 = {integral}, |Ω| = {measure}"
        )));
    }
    Ok(())
}

/// Potential `w` with `Δw = 1 - 1/f1`, Neumann walls, zero mean.
pub fn velocity_potential(f1: &ScalarField, poisson: &PoissonConfig) -> Result<ScalarField> {
    check_monitor(f1)?;
    let rhs = f1.map(|v| 1.0 - 1.0 / v)?;
    numerics::solve_poisson_neumann_with(&rhs, poisson)
}

pub fn build_velocity(f1: &ScalarField) -> Result<VectorField> {
    build_velocity_with(f1, &PoissonConfig::default())
}

/// `u = ∇w`; the wall-normal component is set to zero on each face, which
/// is the Neumann condition the potential satisfies.
pub fn build_velocity_with(f1: &ScalarField, poisson: &PoissonConfig) -> Result<VectorField> {
    let w = velocity_potential(f1, poisson)?;
    let g = w.geometry().clone();
    let mut comps = numerics::gradient(&w).into_components();
    let dims = g.dims3();
    for (a, comp) in comps.iter_mut().enumerate() {
        for (l, v) in comp.iter_mut().enumerate() {
            let i = g.coords(l)[a];
            if i == 0 || i + 1 == dims[a] {
                *v = 0.0;
            }
        }
    }
    VectorField::new(g, comps)
}

/// Per-node data for the flow right-hand side.
struct Flow<'a> {
    geom: &'a LatticeGeometry,
    inv_f1: Vec<f64>,
    u: &'a [Vec<f64>],
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Flow<'_> {
    #[inline]
    fn velocity(&self, p: [f64; 3], t: f64, wall: [bool; 3]) -> [f64; 3] {
        let st = LinearStencil::at(self.geom, p);
        let g = st.apply(&self.inv_f1);
        let f = 1.0 / ((1.0 - t) + t * g);
        let mut v = [0.0; 3];
        for a in 0..self.geom.ndim() {
            if !wall[a] {
                v[a] = f * st.apply(&self.u[a]);
            }
        }
        v
    }

    #[inline]
    fn project(&self, p: &mut [f64; 3], start: [f64; 3], wall: [bool; 3]) {
        for a in 0..self.geom.ndim() {
            if wall[a] {
                p[a] = start[a];
            } else {
                p[a] = p[a].clamp(self.lo[a], self.hi[a]);
            }
        }
    }
}

fn axpy(p: [f64; 3], s: f64, k: [f64; 3]) -> [f64; 3] {
    [p[0] + s * k[0], p[1] + s * k[1], p[2] + s * k[2]]
}

/// Integrates the map from `t = 0` to `t = 1`. Wall nodes keep their
/// wall-normal coordinate; interior positions are clamped into the box.
/// Errors with [`Error::Folding`] if any cell determinant ends up `<= 0`.
pub fn integrate_map(f1: &ScalarField, u: &VectorField, cfg: &DeformationConfig) -> Result<DiffeoMap> {
    let geom = f1.geometry();
    geom.ensure_same(u.geometry(), "integrate_map: velocity")?;
    if cfg.time_steps == 0 {
        return Err(Error::Parameter("time_steps must be at least 1".into()));
    }
    let start = match &cfg.initial_map {
        Some(m) => {
            geom.ensure_same(m.geometry(), "integrate_map: initial map")?;
            m.clone()
        }
        None => DiffeoMap::identity(geom.clone()),
    };
    let ndim = geom.ndim();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for a in 0..ndim {
        lo[a] = geom.origin()[a];
        hi[a] = lo[a] + geom.extent(a);
    }
    let flow = Flow {
        geom,
        inv_f1: f1.values().iter().map(|v| 1.0 / v).collect(),
        u: u.components(),
        lo,
        hi,
    };
    let dims = geom.dims3();
    let steps = cfg.time_steps;
    let dt = 1.0 / steps as f64;
    let integrator = cfg.integrator;

    let finals: Vec<[f64; 3]> = (0..geom.len())
        .into_par_iter()
        .map(|l| {
            let idx = geom.coords(l);
            let mut wall = [false; 3];
            for a in 0..ndim {
                wall[a] = idx[a] == 0 || idx[a] + 1 == dims[a];
            }
            let p0 = start.node(l);
            let mut p = p0;
            for s in 0..steps {
                let t = s as f64 * dt;
                p = match integrator {
                    Integrator::Euler => axpy(p, dt, flow.velocity(p, t, wall)),
                    Integrator::Rk4 => {
                        let k1 = flow.velocity(p, t, wall);
                        let k2 = flow.velocity(axpy(p, 0.5 * dt, k1), t + 0.5 * dt, wall);
                        let k3 = flow.velocity(axpy(p, 0.5 * dt, k2), t + 0.5 * dt, wall);
                        let k4 = flow.velocity(axpy(p, dt, k3), t + dt, wall);
                        let mut q = p;
                        for a in 0..3 {
                            q[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
                        }
                        q
                    }
                };
                flow.project(&mut p, p0, wall);
            }
            p
        })
        .collect();

    let positions = (0..ndim)
        .map(|a| finals.iter().map(|p| p[a]).collect())
        .collect();
    let map = DiffeoMap::new(geom.clone(), positions)?;
    ensure_no_folding(&map)?;
    Ok(map)
}

/// Errors with the worst cell if any cell determinant is `<= 0`.
pub fn ensure_no_folding(map: &DiffeoMap) -> Result<()> {
    let jd = numerics::jacobian_determinant(map);
    let (worst, value) = jd
        .values()
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if value <= 0.0 {
        let c = jd.geometry().coords(worst);
        return Err(Error::Folding {
            cell: c[..map.geometry().ndim()].to_vec(),
            value,
        });
    }
    Ok(())
}

/// Monitor, velocity and flow in one call.
pub fn generate_grid(image: &ScalarField, spec: &MonitorSpec, cfg: &DeformationConfig) -> Result<DiffeoMap> {
    let f1 = monitor_from_image(image, spec)?;
    let u = build_velocity_with(&f1, &cfg.poisson)?;
    integrate_map(&f1, &u, cfg)
}

/// Image of each cell centre: the mean of the cell's corner positions.
pub fn cell_centre_images(map: &DiffeoMap) -> Vec<[f64; 3]> {
    let g = map.geometry();
    let cells = g.cells();
    let ndim = g.ndim();
    let strides = g.strides();
    let n = 1usize << ndim;
    (0..cells.len())
        .map(|c| {
            let base = g.index(cells.coords(c));
            let mut p = [0.0; 3];
            for corner in 0..n {
                let mut l = base;
                for a in 0..ndim {
                    if (corner >> a) & 1 == 1 {
                        l += strides[a];
                    }
                }
                let q = map.node(l);
                for a in 0..ndim {
                    p[a] += q[a] / n as f64;
                }
            }
            p
        })
        .collect()
}

/// `max |J(φ) - f1(φ)| / f1(φ)` over cell centres, with `f1` sampled
/// multilinearly at the image of each cell centre.
pub fn jacobian_mismatch(map: &DiffeoMap, f1: &ScalarField) -> Result<f64> {
    map.geometry().ensure_same(f1.geometry(), "jacobian_mismatch")?;
    let jd = numerics::jacobian_determinant(map);
    let inv: Vec<f64> = f1.values().iter().map(|v| 1.0 / v).collect();
    let g = f1.geometry();
    Ok(cell_centre_images(map)
        .iter()
        .zip(jd.values())
        .map(|(&p, &j)| {
            // sample 1/f1, the quantity that is linear in time
            let target = 1.0 / LinearStencil::at(g, p).apply(&inv);
            ((j - target) / target).abs()
        })
        .fold(0.0, f64::max))
}

/// Plain-text node dump: a `#` header with the lattice dims, then one
/// line per node, `index x y [z]`.
pub fn grid_text(map: &DiffeoMap) -> String {
    let g = map.geometry();
    let mut s = String::new();
    let dims: Vec<String> = g.dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(s, "# dims {}", dims.join(" "));
    for l in 0..g.len() {
        let p = map.node(l);
        let _ = write!(s, "{l}");
        for v in &p[..g.ndim()] {
            let _ = write!(s, " {v:.9}");
        }
        s.push('\n');
    }
    s
}

pub fn write_grid(map: &DiffeoMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, grid_text(map)).map_err(|e| Error::io(path, e))
}
