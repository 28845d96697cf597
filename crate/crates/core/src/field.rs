//! Lattice containers: geometry, scalar and vector fields, node maps and
//! label volumes, plus multilinear resampling.
//!
//! All fields are node-centred on a regular 2D or 3D lattice. Values are
//! stored with the first axis varying fastest, matching the NIfTI voxel
//! order, so `index = i + nx * (j + ny * k)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of nodes per axis for a lattice that carries finite
/// difference stencils.
pub const MIN_NODES_PER_AXIS: usize = 3;

/// Regular lattice description. Unused trailing axes of a 2D lattice hold
/// `dims = 1`, `spacing = 1`, `origin = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    ndim: usize,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl LatticeGeometry {
    pub fn new(dims: &[usize], spacing: &[f64], origin: &[f64]) -> Result<Self> {
        let geom = Self::new_with_min(dims, spacing, origin, MIN_NODES_PER_AXIS)?;
        Ok(geom)
    }

    pub fn with_unit_spacing(dims: &[usize]) -> Result<Self> {
        let ndim = dims.len();
        Self::new(dims, &vec![1.0; ndim], &vec![0.0; ndim])
    }

    /// Lattice spanning `[0, 1]` on every axis.
    pub fn unit_box(dims: &[usize]) -> Result<Self> {
        let spacing: Vec<f64> = dims
            .iter()
            .map(|&n| 1.0 / (n.max(2) - 1) as f64)
            .collect();
        Self::new(dims, &spacing, &vec![0.0; dims.len()])
    }

    fn new_with_min(dims: &[usize], spacing: &[f64], origin: &[f64], min: usize) -> Result<Self> {
        let ndim = dims.len();
        if !(2..=3).contains(&ndim) {
            return Err(Error::Geometry(format!("expected 2 or 3 axes, got {ndim}")));
        }
        if spacing.len() != ndim || origin.len() != ndim {
            return Err(Error::Geometry(format!(
                "dims, spacing and origin must have the same length ({ndim}, {}, {})",
                spacing.len(),
                origin.len()
            )));
        }
        let mut g = LatticeGeometry {
            ndim,
            dims: [1; 3],
            spacing: [1.0; 3],
            origin: [0.0; 3],
        };
        for a in 0..ndim {
            if dims[a] < min {
                return Err(Error::Geometry(format!(
                    "axis {a} has {} nodes, need at least {min}",
                    dims[a]
                )));
            }
            if !(spacing[a] > 0.0 && spacing[a].is_finite()) {
                return Err(Error::Geometry(format!(
                    "axis {a} spacing must be positive and finite, got {}",
                    spacing[a]
                )));
            }
            if !origin[a].is_finite() {
                return Err(Error::Geometry(format!("axis {a} origin is not finite")));
            }
            g.dims[a] = dims[a];
            g.spacing[a] = spacing[a];
            g.origin[a] = origin[a];
        }
        Ok(g)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.ndim]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.ndim]
    }

    /// Dims padded to three axes.
    pub fn dims3(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing3(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin3(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.dims[0], self.dims[0] * self.dims[1]]
    }

    #[inline]
    pub fn index(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn coords(&self, linear: usize) -> [usize; 3] {
        let i = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical position (mm) of a node.
    #[inline]
    pub fn node_position(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..self.ndim {
            p[a] = self.origin[a] + idx[a] as f64 * self.spacing[a];
        }
        p
    }

    /// Physical length of axis `a`, `(n - 1) * h`.
    pub fn extent(&self, a: usize) -> f64 {
        (self.dims[a] - 1) as f64 * self.spacing[a]
    }

    /// Measure of the box spanned by the lattice nodes.
    pub fn domain_measure(&self) -> f64 {
        (0..self.ndim).map(|a| self.extent(a)).product()
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn is_boundary(&self, idx: [usize; 3]) -> bool {
        (0..self.ndim).any(|a| idx[a] == 0 || idx[a] + 1 == self.dims[a])
    }

    /// Lattice of cell centres: one fewer node per axis, origin shifted by
    /// half a cell. Cell lattices may have as few as two nodes per axis.
    pub fn cells(&self) -> LatticeGeometry {
        let mut g = self.clone();
        for a in 0..self.ndim {
            g.dims[a] -= 1;
            g.origin[a] += 0.5 * self.spacing[a];
        }
        g
    }

    /// Same lattice with a different origin.
    pub fn with_origin(&self, origin: &[f64]) -> Result<Self> {
        Self::new_with_min(self.dims(), self.spacing(), origin, 1)
    }

    /// Dims and spacing agree (spacing to 1e-6 relative) and origins agree
    /// to 1e-6 mm.
    pub fn same_lattice(&self, other: &LatticeGeometry) -> bool {
        self.ndim == other.ndim
            && self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= 1e-6 * self.spacing[a]
                    && (self.origin[a] - other.origin[a]).abs() <= 1e-6
            })
    }

    pub fn ensure_same(&self, other: &LatticeGeometry, what: &str) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "{what}: lattice {:?}/{:?} does not match {:?}/{:?}",
                self.dims(),
                self.spacing(),
                other.dims(),
                other.spacing()
            )))
        }
    }

    /// Trapezoidal quadrature weight of a node (includes the cell measure).
    #[inline]
    pub fn quadrature_weight(&self, idx: [usize; 3]) -> f64 {
        let mut w = 1.0;
        for a in 0..self.ndim {
            w *= self.spacing[a];
            if idx[a] == 0 || idx[a] + 1 == self.dims[a] {
                w *= 0.5;
            }
        }
        w
    }

    /// Trapezoidal integral of node values over the box.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values
            .iter()
            .enumerate()
            .map(|(l, v)| v * self.quadrature_weight(self.coords(l)))
            .sum()
    }
}

/// Real value per lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    geometry: LatticeGeometry,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(geometry: LatticeGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "expected {} values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at node {pos}"
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn constant(geometry: LatticeGeometry, value: f64) -> Self {
        let values = vec![value; geometry.len()];
        Self { geometry, values }
    }

    /// Evaluates `f` at the physical position of every node.
    pub fn from_fn(geometry: LatticeGeometry, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let values = (0..geometry.len())
            .map(|l| f(geometry.node_position(geometry.coords(l))))
            .collect();
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, idx: [usize; 3]) -> f64 {
        self.values[self.geometry.index(idx)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn integral(&self) -> f64 {
        self.geometry.integrate(&self.values)
    }

    /// Applies `f` node-wise; errors if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.geometry.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Node-wise combination of two fields on the same lattice.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.geometry.ensure_same(&other.geometry, "zip_with")?;
        Self::new(
            self.geometry.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Replaces the geometry, keeping values. The node count must match.
    pub fn with_geometry(self, geometry: LatticeGeometry) -> Result<Self> {
        Self::new(geometry, self.values)
    }
}

/// One `ndim`-vector per node, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    geometry: LatticeGeometry,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(geometry: LatticeGeometry, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != geometry.ndim() {
            return Err(Error::Geometry(format!(
                "{} components for a {}-axis lattice",
                comps.len(),
                geometry.ndim()
            )));
        }
        for (a, c) in comps.iter().enumerate() {
            if c.len() != geometry.len() {
                return Err(Error::Geometry(format!(
                    "component {a} has {} values, expected {}",
                    c.len(),
                    geometry.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "component {a} has non-finite values"
                )));
            }
        }
        Ok(Self { geometry, comps })
    }

    pub fn zeros(geometry: LatticeGeometry) -> Self {
        let comps = vec![vec![0.0; geometry.len()]; geometry.ndim()];
        Self { geometry, comps }
    }

    pub fn from_fn(geometry: LatticeGeometry, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let n = geometry.len();
        let mut comps = vec![vec![0.0; n]; geometry.ndim()];
        for l in 0..n {
            let v = f(geometry.node_position(geometry.coords(l)));
            for (a, c) in comps.iter_mut().enumerate() {
                c[l] = v[a];
            }
        }
        Self::new(geometry, comps)
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn component(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.comps
    }

    pub fn at(&self, l: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, c) in self.comps.iter().enumerate() {
            v[a] = c[l];
        }
        v
    }

    /// Largest Euclidean norm over nodes.
    pub fn max_norm(&self) -> f64 {
        (0..self.geometry.len())
            .map(|l| {
                let v = self.at(l);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Euclidean norm per node.
    pub fn magnitude(&self) -> ScalarField {
        let values = (0..self.geometry.len())
            .map(|l| {
                let v = self.at(l);
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            })
            .collect();
        ScalarField {
            geometry: self.geometry.clone(),
            values,
        }
    }

    pub fn component_field(&self, a: usize) -> ScalarField {
        ScalarField {
            geometry: self.geometry.clone(),
            values: self.comps[a].clone(),
        }
    }
}

/// Node-sampled transformation: `positions[a][l]` is the physical
/// coordinate (mm) along axis `a` of the image of node `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffeoMap {
    geometry: LatticeGeometry,
    positions: Vec<Vec<f64>>,
}

impl DiffeoMap {
    pub fn new(geometry: LatticeGeometry, positions: Vec<Vec<f64>>) -> Result<Self> {
        let v = VectorField::new(geometry, positions)?;
        Ok(Self {
            geometry: v.geometry,
            positions: v.comps,
        })
    }

    pub fn identity(geometry: LatticeGeometry) -> Self {
        let n = geometry.len();
        let mut positions = vec![vec![0.0; n]; geometry.ndim()];
        for l in 0..n {
            let p = geometry.node_position(geometry.coords(l));
            for (a, c) in positions.iter_mut().enumerate() {
                c[l] = p[a];
            }
        }
        Self {
            geometry,
            positions,
        }
    }

    /// Identity plus the given displacement (mm).
    pub fn from_displacement(displacement: &VectorField) -> Self {
        let mut map = Self::identity(displacement.geometry.clone());
        for (pos, d) in map.positions.iter_mut().zip(&displacement.comps) {
            for (p, v) in pos.iter_mut().zip(d) {
                *p += v;
            }
        }
        map
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<Vec<f64>> {
        self.positions
    }

    pub fn node(&self, l: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (a, c) in self.positions.iter().enumerate() {
            p[a] = c[l];
        }
        p
    }

    /// `phi(xi) - xi` in mm.
    pub fn displacement(&self) -> VectorField {
        let g = &self.geometry;
        let comps = self
            .positions
            .iter()
            .enumerate()
            .map(|(a, c)| {
                c.iter()
                    .enumerate()
                    .map(|(l, p)| p - g.node_position(g.coords(l))[a])
                    .collect()
            })
            .collect();
        VectorField {
            geometry: g.clone(),
            comps,
        }
    }

    /// Largest node displacement measured in cells (per-axis division by
    /// spacing before taking the Euclidean norm).
    pub fn max_displacement_cells(&self) -> f64 {
        let d = self.displacement();
        let h = self.geometry.spacing3();
        (0..self.geometry.len())
            .map(|l| {
                let v = d.at(l);
                (0..3).map(|a| (v[a] / h[a]).powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Per-node Euclidean distance to `other`, in cells.
    pub fn node_errors_cells(&self, other: &DiffeoMap) -> Result<Vec<f64>> {
        self.geometry.ensure_same(&other.geometry, "node_errors")?;
        let h = self.geometry.spacing3();
        Ok((0..self.geometry.len())
            .map(|l| {
                let p = self.node(l);
                let q = other.node(l);
                (0..3)
                    .map(|a| ((p[a] - q[a]) / h[a]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

/// Integer class per voxel with a label-to-name table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: LatticeGeometry,
    labels: Vec<u8>,
    class_names: BTreeMap<u8, String>,
}

pub const BACKGROUND: u8 = 0;
pub const CSF: u8 = 1;
pub const GM: u8 = 2;
pub const WM: u8 = 3;
/// Tissue classes evaluated and averaged in reports.
pub const TISSUE_CLASSES: [u8; 3] = [CSF, GM, WM];

pub fn default_class_name(label: u8) -> String {
    match label {
        BACKGROUND => "background".to_string(),
        CSF => "CSF".to_string(),
        GM => "GM".to_string(),
        WM => "WM".to_string(),
        other => format!("label{other}"),
    }
}

impl LabelVolume {
    /// Builds a volume whose name table covers every label present, using
    /// the brain-tissue names for 0..=3.
    pub fn new(geometry: LatticeGeometry, labels: Vec<u8>) -> Result<Self> {
        let mut class_names: BTreeMap<u8, String> =
            (0..=3).map(|l| (l, default_class_name(l))).collect();
        for &l in &labels {
            class_names.entry(l).or_insert_with(|| default_class_name(l));
        }
        Self::with_names(geometry, labels, class_names)
    }

    pub fn with_names(
        geometry: LatticeGeometry,
        labels: Vec<u8>,
        class_names: BTreeMap<u8, String>,
    ) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(Error::Geometry(format!(
                "expected {} labels, got {}",
                geometry.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| !class_names.contains_key(l)) {
            return Err(Error::InvalidInput(format!("label {l} has no class name")));
        }
        Ok(Self {
            geometry,
            labels,
            class_names,
        })
    }

    /// Voxels where `field > threshold` get label 1, others 0.
    pub fn mask_from(field: &ScalarField, threshold: f64) -> Self {
        let labels = field
            .values()
            .iter()
            .map(|&v| u8::from(v > threshold))
            .collect();
        let class_names = [(0, "outside".to_string()), (1, "mask".to_string())]
            .into_iter()
            .collect();
        Self {
            geometry: field.geometry().clone(),
            labels,
            class_names,
        }
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_names(&self) -> &BTreeMap<u8, String> {
        &self.class_names
    }

    pub fn class_name(&self, label: u8) -> String {
        self.class_names
            .get(&label)
            .cloned()
            .unwrap_or_else(|| default_class_name(label))
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Corner indices and weights of a multilinear interpolation stencil.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearStencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub n: usize,
}

impl LinearStencil {
    /// Stencil at physical position `p`; positions outside the lattice are
    /// clamped to the boundary.
    #[inline]
    pub fn at(g: &LatticeGeometry, p: [f64; 3]) -> Self {
        let ndim = g.ndim;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..ndim {
            let n = g.dims[a];
            let c = ((p[a] - g.origin[a]) / g.spacing[a]).clamp(0.0, (n - 1) as f64);
            let i0 = (c.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = c - i0 as f64;
        }
        let strides = g.strides();
        let n = 1usize << ndim;
        let mut idx = [0usize; 8];
        let mut w = [0.0; 8];
        for corner in 0..n {
            let mut lin = 0;
            let mut wt = 1.0;
            for a in 0..ndim {
                let bit = (corner >> a) & 1;
                lin += (base[a] + bit) * strides[a];
                wt *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            idx[corner] = lin;
            w[corner] = wt;
        }
        Self { idx, w, n }
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in 0..self.n {
            s += self.w[c] * values[self.idx[c]];
        }
        s
    }
}

/// Multilinear value of `field` at a physical position, clamped to the
/// lattice.
pub fn sample_linear(field: &ScalarField, p: [f64; 3]) -> f64 {
    LinearStencil::at(&field.geometry, p).apply(&field.values)
}

/// Samples `field` at every node position of `at`. The result lives on the
/// lattice of `at`.
pub fn resample_trilinear(field: &ScalarField, at: &DiffeoMap) -> Result<ScalarField> {
    if field.geometry.ndim() != at.geometry.ndim() {
        return Err(Error::Geometry(format!(
            "cannot sample a {}-axis field at {}-axis positions",
            field.geometry.ndim(),
            at.geometry.ndim()
        )));
    }
    let values = (0..at.geometry.len())
        .map(|l| sample_linear(field, at.node(l)))
        .collect();
    ScalarField::new(at.geometry.clone(), values)
}
