//! Jacobian-determinant and curl feature images, multi-channel stacks and
//! overlap tiling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deformation::{generate_grid, DeformationConfig, MonitorSpec};
use crate::error::{Error, Result};
use crate::field::{DiffeoMap, LatticeGeometry, ScalarField};
use crate::nifti;
use crate::numerics::{self, Curl};

/// Feature images on the input voxel lattice.
#[derive(Debug, Clone)]
pub struct Features {
    pub jd: ScalarField,
    /// Scalar curl in 2D, curl magnitude in 3D.
    pub cv: ScalarField,
    /// Full curl of the displacement.
    pub curl: Curl,
    pub map: DiffeoMap,
}

impl Features {
    /// Curl components as separate images (one in 2D, three in 3D).
    pub fn cv_components(&self) -> Vec<ScalarField> {
        match &self.curl {
            Curl::Scalar(s) => vec![s.clone()],
            Curl::Vector(v) => (0..3).map(|a| v.component_field(a)).collect(),
        }
    }
}

/// Cell-centred values averaged onto nodes from all incident cells.
pub fn cells_to_nodes(cells: &ScalarField, nodes: &LatticeGeometry) -> Result<ScalarField> {
    nodes.cells().ensure_same(cells.geometry(), "cells_to_nodes")?;
    let cg = cells.geometry();
    let cd = cg.dims3();
    let ndim = nodes.ndim();
    let out = (0..nodes.len())
        .into_par_iter()
        .map(|l| {
            let idx = nodes.coords(l);
            let mut ranges = [(0usize, 0usize); 3];
            for a in 0..3 {
                ranges[a] = if a < ndim {
                    (idx[a].saturating_sub(1), idx[a].min(cd[a] - 1))
                } else {
                    (0, 0)
                };
            }
            let (mut s, mut n) = (0.0, 0.0);
            for k in ranges[2].0..=ranges[2].1 {
                for j in ranges[1].0..=ranges[1].1 {
                    for i in ranges[0].0..=ranges[0].1 {
                        s += cells.at([i, j, k]);
                        n += 1.0;
                    }
                }
            }
            s / n
        })
        .collect();
    ScalarField::new(nodes.clone(), out)
}

/// Runs grid generation on `t1` and derives the JD and CV images.
pub fn extract_jd_cv(t1: &ScalarField, spec: &MonitorSpec, cfg: &DeformationConfig) -> Result<Features> {
    let map = generate_grid(t1, spec, cfg)?;
    let jd = cells_to_nodes(&numerics::jacobian_determinant(&map), t1.geometry())?;
    let curl = numerics::curl(&map.displacement());
    Ok(Features {
        jd,
        cv: curl.magnitude(),
        curl,
        map,
    })
}

pub const T1: &str = "T1";
pub const T1_IR: &str = "T1-IR";
pub const FLAIR: &str = "FLAIR";
pub const JD: &str = "JD";
pub const CV: &str = "CV";

pub const MAX_CHANNELS: usize = 5;

/// Co-registered channels sharing one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    channels: Vec<ScalarField>,
    names: Vec<String>,
}

impl ChannelStack {
    pub fn new(channels: Vec<ScalarField>, names: Vec<String>) -> Result<Self> {
        if channels.len() != names.len() {
            return Err(Error::InvalidInput(format!(
                "{} channels but {} names",
                channels.len(),
                names.len()
            )));
        }
        if channels.is_empty() || channels.len() > MAX_CHANNELS {
            return Err(Error::InvalidInput(format!(
                "channel count {} outside 1..={MAX_CHANNELS}",
                channels.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::InvalidInput(format!("duplicate channel name {n}")));
            }
        }
        let g = channels[0].geometry();
        for (c, n) in channels.iter().zip(&names).skip(1) {
            g.ensure_same(c.geometry(), &format!("channel {n}"))?;
        }
        Ok(Self { channels, names })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        self.channels[0].geometry()
    }

    pub fn channels(&self) -> &[ScalarField] {
        &self.channels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&ScalarField> {
        self.names.iter().position(|n| n == name).map(|i| &self.channels[i])
    }
}

/// Concatenates modalities then features, in order.
pub fn assemble_stack(modalities: &[ScalarField], features: &[ScalarField], names: &[String]) -> Result<ChannelStack> {
    let channels: Vec<ScalarField> = modalities.iter().chain(features).cloned().collect();
    ChannelStack::new(channels, names.to_vec())
}

/// Input configuration of a segmentation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentArm {
    Single,
    Three,
    SingleJd,
    SingleCv,
    SingleJdCv,
    ThreeJd,
    ThreeCv,
    ThreeJdCv,
}

impl ExperimentArm {
    pub const ALL: [ExperimentArm; 8] = [
        ExperimentArm::Single,
        ExperimentArm::Three,
        ExperimentArm::SingleJd,
        ExperimentArm::SingleCv,
        ExperimentArm::SingleJdCv,
        ExperimentArm::ThreeJd,
        ExperimentArm::ThreeCv,
        ExperimentArm::ThreeJdCv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentArm::Single => "single",
            ExperimentArm::Three => "three",
            ExperimentArm::SingleJd => "single+jd",
            ExperimentArm::SingleCv => "single+cv",
            ExperimentArm::SingleJdCv => "single+jdcv",
            ExperimentArm::ThreeJd => "three+jd",
            ExperimentArm::ThreeCv => "three+cv",
            ExperimentArm::ThreeJdCv => "three+jdcv",
        }
    }

    pub fn three_modalities(self) -> bool {
        matches!(
            self,
            ExperimentArm::Three | ExperimentArm::ThreeJd | ExperimentArm::ThreeCv | ExperimentArm::ThreeJdCv
        )
    }

    pub fn uses_jd(self) -> bool {
        matches!(
            self,
            ExperimentArm::SingleJd | ExperimentArm::SingleJdCv | ExperimentArm::ThreeJd | ExperimentArm::ThreeJdCv
        )
    }

    pub fn uses_cv(self) -> bool {
        matches!(
            self,
            ExperimentArm::SingleCv | ExperimentArm::SingleJdCv | ExperimentArm::ThreeCv | ExperimentArm::ThreeJdCv
        )
    }

    pub fn modality_names(self) -> Vec<String> {
        let m: &[&str] = if self.three_modalities() { &[T1, T1_IR, FLAIR] } else { &[T1] };
        m.iter().map(|s| s.to_string()).collect()
    }

    pub fn feature_names(self) -> Vec<String> {
        let mut f = Vec::new();
        if self.uses_jd() {
            f.push(JD.to_string());
        }
        if self.uses_cv() {
            f.push(CV.to_string());
        }
        f
    }

    pub fn channel_names(self) -> Vec<String> {
        let mut n = self.modality_names();
        n.extend(self.feature_names());
        n
    }

    /// Builds the arm's stack. `modalities` must hold T1 first, then T1-IR
    /// and FLAIR for three-modality arms; `features` holds whichever of JD
    /// and CV the arm uses, in that order.
    pub fn assemble(self, modalities: &[ScalarField], features: &[ScalarField]) -> Result<ChannelStack> {
        let want_m = self.modality_names().len();
        let want_f = self.feature_names().len();
        if modalities.len() != want_m || features.len() != want_f {
            return Err(Error::InvalidInput(format!(
                "arm {} needs {want_m} modalities and {want_f} features, got {} and {}",
                self.name(),
                modalities.len(),
                features.len()
            )));
        }
        assemble_stack(modalities, features, &self.channel_names())
    }
}

impl std::fmt::Display for ExperimentArm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExperimentArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        ExperimentArm::ALL
            .into_iter()
            .find(|a| a.name().replace('+', "") == key.replace('+', ""))
            .ok_or_else(|| Error::Parameter(format!("unknown experiment arm {s:?}")))
    }
}

/// Axis-aligned box of voxels: `offset .. offset + extent` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub offset: [usize; 3],
    pub extent: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackTile {
    pub tile: Tile,
    pub stack: ChannelStack,
}

/// Tile starts along one axis: steps of `stride`, with the last tile
/// shifted back so it ends on the boundary.
pub fn tile_starts(n: usize, size: usize, stride: usize) -> Vec<usize> {
    let size = size.min(n);
    let mut starts = vec![0];
    let mut s = 0;
    while s + size < n {
        s = (s + stride).min(n - size);
        starts.push(s);
    }
    starts
}

/// Tiles covering every voxel. Tile extents larger than an axis are
/// clamped to the axis length; a stride above the tile size would leave
/// gaps and is rejected.
pub fn tile_layout(geom: &LatticeGeometry, size: &[usize], stride: &[usize]) -> Result<Vec<Tile>> {
    let ndim = geom.ndim();
    if size.len() != ndim || stride.len() != ndim {
        return Err(Error::Parameter(format!(
            "tile size and stride need {ndim} entries, got {} and {}",
            size.len(),
            stride.len()
        )));
    }
    if let Some(s) = size.iter().find(|&&s| s < crate::field::MIN_NODES_PER_AXIS) {
        return Err(Error::Parameter(format!(
            "tile size {s} below {} voxels",
            crate::field::MIN_NODES_PER_AXIS
        )));
    }
    if stride.contains(&0) {
        return Err(Error::Parameter("tile stride must be positive".into()));
    }
    let dims = geom.dims3();
    for a in 0..ndim {
        if size[a] < dims[a] && stride[a] > size[a] {
            return Err(Error::Parameter(format!(
                "tile stride {} exceeds tile size {} on axis {a}, leaving gaps",
                stride[a], size[a]
            )));
        }
    }
    let per_axis: Vec<Vec<usize>> = (0..3)
        .map(|a| if a < ndim { tile_starts(dims[a], size[a], stride[a]) } else { vec![0] })
        .collect();
    let mut extent = [1; 3];
    for a in 0..ndim {
        extent[a] = size[a].min(dims[a]);
    }
    let mut tiles = Vec::new();
    for &z in &per_axis[2] {
        for &y in &per_axis[1] {
            for &x in &per_axis[0] {
                tiles.push(Tile { offset: [x, y, z], extent });
            }
        }
    }
    Ok(tiles)
}

fn tile_geometry(geom: &LatticeGeometry, tile: &Tile) -> Result<LatticeGeometry> {
    let ndim = geom.ndim();
    let origin: Vec<f64> = (0..ndim)
        .map(|a| geom.origin()[a] + tile.offset[a] as f64 * geom.spacing()[a])
        .collect();
    LatticeGeometry::new(&tile.extent[..ndim], geom.spacing(), &origin)
}

fn crop(field: &ScalarField, tile: &Tile, tg: &LatticeGeometry) -> Result<ScalarField> {
    let v = (0..tg.len())
        .map(|l| {
            let i = tg.coords(l);
            field.at([i[0] + tile.offset[0], i[1] + tile.offset[1], i[2] + tile.offset[2]])
        })
        .collect();
    ScalarField::new(tg.clone(), v)
}

/// Crops every channel to each tile of [`tile_layout`].
pub fn crop_subvolumes(stack: &ChannelStack, size: &[usize], stride: &[usize]) -> Result<Vec<StackTile>> {
    let geom = stack.geometry();
    tile_layout(geom, size, stride)?
        .into_par_iter()
        .map(|tile| {
            let tg = tile_geometry(geom, &tile)?;
            let channels = stack
                .channels()
                .iter()
                .map(|c| crop(c, &tile, &tg))
                .collect::<Result<Vec<_>>>()?;
            Ok(StackTile {
                tile,
                stack: ChannelStack::new(channels, stack.names().to_vec())?,
            })
        })
        .collect()
}

/// Reassembles tiles onto `geom`; overlapping voxels take the value of the
/// last tile that covers them. Errors if any voxel is uncovered.
pub fn stitch(tiles: &[StackTile], geom: &LatticeGeometry) -> Result<ChannelStack> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::InvalidInput("no tiles to stitch".into()))?;
    let names = first.stack.names().to_vec();
    let mut data = vec![vec![0.0; geom.len()]; names.len()];
    let mut covered = vec![false; geom.len()];
    let dims = geom.dims3();
    for t in tiles {
        if t.stack.names() != names.as_slice() {
            return Err(Error::InvalidInput("tiles disagree on channel names".into()));
        }
        if (0..3).any(|a| t.tile.offset[a] + t.tile.extent[a] > dims[a]) {
            return Err(Error::Geometry(format!("tile {:?} exceeds the volume", t.tile)));
        }
        let tg = t.stack.geometry();
        for l in 0..tg.len() {
            let i = tg.coords(l);
            let dst = geom.index([i[0] + t.tile.offset[0], i[1] + t.tile.offset[1], i[2] + t.tile.offset[2]]);
            covered[dst] = true;
            for (d, c) in data.iter_mut().zip(t.stack.channels()) {
                d[dst] = c.values()[l];
            }
        }
    }
    if let Some(l) = covered.iter().position(|&c| !c) {
        return Err(Error::InvalidInput(format!(
            "voxel {:?} is not covered by any tile",
            &geom.coords(l)[..geom.ndim()]
        )));
    }
    let channels = data
        .into_iter()
        .map(|d| ScalarField::new(geom.clone(), d))
        .collect::<Result<Vec<_>>>()?;
    ChannelStack::new(channels, names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub index: usize,
    pub name: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub index: usize,
    pub offset: Vec<usize>,
    pub extent: Vec<usize>,
    pub files: Vec<String>,
}

/// Description of the files written for a stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub arm: Option<String>,
    pub channels: Vec<ChannelEntry>,
    pub geometry: LatticeGeometry,
    /// Each physical channel is stored once; some segmenter setups feed
    /// every modality twice, which this count does not include.
    pub physical_channels: usize,
    pub tiles: Vec<TileEntry>,
}

impl StackManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

fn channel_file(prefix: &str, i: usize, name: &str) -> String {
    format!("{prefix}ch{i}_{name}.nii")
}

/// Writes one NIfTI per channel (and per tile channel when tiles are
/// given) plus `manifest.json` into `dir`.
pub fn write_stack(
    stack: &ChannelStack,
    arm: Option<ExperimentArm>,
    tiles: &[StackTile],
    dir: impl AsRef<Path>,
) -> Result<StackManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |prefix: &str, s: &ChannelStack| -> Result<Vec<String>> {
        s.channels()
            .iter()
            .zip(s.names())
            .enumerate()
            .map(|(i, (c, n))| {
                let f = channel_file(prefix, i, n);
                nifti::write_volume(c, dir.join(&f))?;
                Ok(f)
            })
            .collect()
    };
    let files = write("", stack)?;
    let channels = files
        .into_iter()
        .enumerate()
        .map(|(index, file)| ChannelEntry {
            index,
            name: stack.names()[index].clone(),
            file,
        })
        .collect();
    let ndim = stack.geometry().ndim();
    let tiles = tiles
        .iter()
        .enumerate()
        .map(|(index, t)| {
            Ok(TileEntry {
                index,
                offset: t.tile.offset[..ndim].to_vec(),
                extent: t.tile.extent[..ndim].to_vec(),
                files: write(&format!("tile{index:03}_"), &t.stack)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = StackManifest {
        arm: arm.map(|a| a.name().to_string()),
        channels,
        geometry: stack.geometry().clone(),
        physical_channels: stack.len(),
        tiles,
    };
    let path: PathBuf = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
