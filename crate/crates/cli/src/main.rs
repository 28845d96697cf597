//! Command-line driver: preprocessing, JD/CV feature extraction, channel
//! stacks and tiles, segmentation evaluation and the recovery demo.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use deformfeat::deformation::{write_grid, DeformationConfig, Integrator, MonitorSpec};
use deformfeat::features::{self, ChannelStack, ExperimentArm};
use deformfeat::field::{LatticeGeometry, ScalarField};
use deformfeat::metrics::{self, HdPoints};
use deformfeat::phantom::brain_phantom;
use deformfeat::preprocess::{self, PreprocessConfig};
use deformfeat::recovery::{self, RecoveryProblem};
use deformfeat::nifti;
use log::info;
use serde_json::json;

#[derive(Parser)]
#[command(name = "deformfeat", version, about = "Deformation-method feature images for multimodal MRI segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian subtraction, brain-mask z-scores and CLAHE for each input.
    Preprocess(PreprocessArgs),
    /// Generate the deformation grid of a T1 volume and write JD/CV images.
    Extract(ExtractArgs),
    /// Assemble the channel stack of an experiment arm, optionally tiled.
    Stack(StackArgs),
    /// Dice, Hausdorff distance and volume difference per tissue class.
    Eval(EvalArgs),
    /// Recover a synthetic map from its Jacobian determinant and curl.
    Recover(RecoverArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input NIfTI volumes.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Gaussian sigma in mm.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    #[arg(long = "clahe-tiles", default_value_t = 8)]
    clahe_tiles: usize,
    #[arg(long = "clahe-clip", default_value_t = 0.01)]
    clahe_clip: f64,
    /// Intensities above this form the brain mask.
    #[arg(long = "mask-threshold", default_value_t = 0.0)]
    mask_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct MonitorArgs {
    /// Weight of image brightness in the monitor.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Weight of the normalized gradient magnitude in the monitor.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Lower clamp of the raw monitor.
    #[arg(long, default_value_t = 0.1)]
    floor: f64,
    /// Time steps of the map flow.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// euler or rk4.
    #[arg(long, default_value = "rk4")]
    integrator: String,
}

impl MonitorArgs {
    fn spec(&self) -> MonitorSpec {
        MonitorSpec {
            alpha: self.alpha,
            beta: self.beta,
            floor: self.floor,
        }
    }

    fn config(&self) -> Result<DeformationConfig> {
        Ok(DeformationConfig {
            time_steps: self.steps,
            integrator: self.integrator.parse::<Integrator>()?,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// T1 volume; omit with --demo.
    #[arg(required_unless_present = "demo")]
    t1: Option<PathBuf>,
    /// Use the built-in 2D synthetic brain phantom instead of a file.
    #[arg(long, conflicts_with = "t1")]
    demo: bool,
    /// Phantom side length for --demo.
    #[arg(long = "demo-size", default_value_t = 65)]
    demo_size: usize,
    /// Also write each curl component as its own image.
    #[arg(long = "cv-components")]
    cv_components: bool,
    #[command(flatten)]
    monitor: MonitorArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StackArgs {
    /// single, three, single+jd, single+cv, single+jdcv, three+jd, three+cv or three+jdcv.
    #[arg(long)]
    arm: ExperimentArm,
    #[arg(long)]
    t1: PathBuf,
    #[arg(long = "t1-ir")]
    t1_ir: Option<PathBuf>,
    #[arg(long)]
    flair: Option<PathBuf>,
    /// Precomputed JD image; extracted from T1 when absent.
    #[arg(long)]
    jd: Option<PathBuf>,
    /// Precomputed CV image; extracted from T1 when absent.
    #[arg(long)]
    cv: Option<PathBuf>,
    /// Tile extent, one value for all axes or one per axis (comma separated).
    #[arg(long = "tile-size", value_delimiter = ',')]
    tile_size: Option<Vec<usize>>,
    /// Tile step; defaults to the tile size.
    #[arg(long = "tile-stride", value_delimiter = ',')]
    tile_stride: Option<Vec<usize>>,
    #[command(flatten)]
    monitor: MonitorArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted label volume.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label volume.
    #[arg(long)]
    truth: PathBuf,
    /// Use whole class regions instead of boundaries for the Hausdorff distance.
    #[arg(long = "hd-region")]
    hd_region: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    /// Grid nodes per axis, e.g. 65,65 or 17,17,17.
    #[arg(long = "grid", value_delimiter = ',', default_values_t = [65, 65])]
    grid: Vec<usize>,
    /// Peak displacement of the synthetic map as a fraction of the extent.
    #[arg(long, default_value_t = 0.05)]
    amplitude: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Weight of the Laplacian smoothness term.
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_scalar(path: &Path) -> Result<ScalarField> {
    nifti::read_scalar(path).with_context(|| format!("reading {}", path.display()))
}

/// `dir/<stem><suffix>.nii[.gz]`, keeping the input's compression.
fn suffixed(dir: &Path, input: &Path, suffix: &str) -> PathBuf {
    let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (stem, ext) = if let Some(s) = name.strip_suffix(".nii.gz") {
        (s.to_string(), ".nii.gz")
    } else if let Some(s) = name.strip_suffix(".nii") {
        (s.to_string(), ".nii")
    } else {
        (name, ".nii")
    };
    dir.join(format!("{stem}{suffix}{ext}"))
}

fn geometry_json(g: &LatticeGeometry) -> serde_json::Value {
    json!({ "dims": g.dims(), "spacing": g.spacing(), "origin": g.origin() })
}

fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let cfg = PreprocessConfig {
        gaussian_sigma: a.sigma,
        clahe_tiles: a.clahe_tiles,
        clahe_clip: a.clahe_clip,
        mask_threshold: a.mask_threshold,
    };
    cfg.validate()?;
    create_dir(&a.out)?;
    let mut records = Vec::new();
    for input in &a.inputs {
        let image = read_scalar(input)?;
        let out = preprocess::preprocess(&image, &cfg)
            .with_context(|| format!("preprocessing {}", input.display()))?;
        let path = suffixed(&a.out, input, "_pre");
        nifti::write_volume(&out, &path)?;
        info!("{} -> {}", input.display(), path.display());
        records.push(json!({
            "input": input.display().to_string(),
            "output": path.file_name().unwrap().to_string_lossy(),
            "geometry": geometry_json(image.geometry()),
        }));
    }
    let provenance = json!({
        "tool": concat!("deformfeat ", env!("CARGO_PKG_VERSION")),
        "steps": ["gaussian_subtract", "zscore", "clahe"],
        "config": {
            "sigma_mm": cfg.gaussian_sigma,
            "clahe_tiles": cfg.clahe_tiles,
            "clahe_clip": cfg.clahe_clip,
            "mask_threshold": cfg.mask_threshold,
        },
        "volumes": records,
    });
    write_text(&a.out.join("provenance.json"), &serde_json::to_string_pretty(&provenance)?)
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    create_dir(&a.out)?;
    let t1 = match &a.t1 {
        Some(path) => read_scalar(path)?,
        None => {
            let g = LatticeGeometry::with_unit_spacing(&[a.demo_size, a.demo_size])?;
            let p = brain_phantom(&g)?;
            nifti::write_volume(&p.t1, a.out.join("phantom_t1.nii"))?;
            nifti::write_volume(&p.labels, a.out.join("phantom_labels.nii"))?;
            p.t1
        }
    };
    let spec = a.monitor.spec();
    let cfg = a.monitor.config()?;
    let f = features::extract_jd_cv(&t1, &spec, &cfg).context("grid generation failed")?;
    nifti::write_volume(&f.jd, a.out.join("jd.nii"))?;
    nifti::write_volume(&f.cv, a.out.join("cv.nii"))?;
    if a.cv_components {
        let axes = ["x", "y", "z"];
        for (i, c) in f.cv_components().iter().enumerate() {
            let name = if f.cv_components().len() == 1 { "cv_z".to_string() } else { format!("cv_{}", axes[i]) };
            nifti::write_volume(c, a.out.join(format!("{name}.nii")))?;
        }
    }
    write_grid(&f.map, a.out.join("grid.txt"))?;
    println!(
        "JD range [{:.4}, {:.4}], |CV| max {:.4}, max node displacement {:.3} cells",
        f.jd.min(),
        f.jd.max(),
        f.cv.max_abs(),
        f.map.max_displacement_cells()
    );
    Ok(())
}

fn per_axis(v: &[usize], ndim: usize, what: &str) -> Result<Vec<usize>> {
    match v.len() {
        1 => Ok(vec![v[0]; ndim]),
        n if n == ndim => Ok(v.to_vec()),
        n => bail!("{what} needs 1 or {ndim} values, got {n}"),
    }
}

fn cmd_stack(a: &StackArgs) -> Result<()> {
    let arm = a.arm;
    let t1 = read_scalar(&a.t1)?;
    let mut modalities = vec![t1.clone()];
    if arm.three_modalities() {
        for (flag, path) in [("--t1-ir", &a.t1_ir), ("--flair", &a.flair)] {
            let path = path
                .as_ref()
                .with_context(|| format!("arm {arm} needs {flag}"))?;
            modalities.push(read_scalar(path)?);
        }
    } else if a.t1_ir.is_some() || a.flair.is_some() {
        bail!("arm {arm} uses T1 only; drop --t1-ir/--flair or pick a three-modality arm");
    }
    let need_extract = (arm.uses_jd() && a.jd.is_none()) || (arm.uses_cv() && a.cv.is_none());
    let extracted = if need_extract {
        info!("extracting JD/CV from {}", a.t1.display());
        Some(features::extract_jd_cv(&t1, &a.monitor.spec(), &a.monitor.config()?).context("grid generation failed")?)
    } else {
        None
    };
    let mut feats = Vec::new();
    if arm.uses_jd() {
        feats.push(match &a.jd {
            Some(p) => read_scalar(p)?,
            None => extracted.as_ref().unwrap().jd.clone(),
        });
    }
    if arm.uses_cv() {
        feats.push(match &a.cv {
            Some(p) => read_scalar(p)?,
            None => extracted.as_ref().unwrap().cv.clone(),
        });
    }
    let stack: ChannelStack = arm.assemble(&modalities, &feats)?;
    let ndim = stack.geometry().ndim();
    let tiles = if a.tile_size.is_some() || a.tile_stride.is_some() {
        let size = per_axis(a.tile_size.as_deref().unwrap_or(&[80]), ndim, "--tile-size")?;
        let stride = match &a.tile_stride {
            Some(s) => per_axis(s, ndim, "--tile-stride")?,
            None => size.clone(),
        };
        features::crop_subvolumes(&stack, &size, &stride)?
    } else {
        Vec::new()
    };
    let manifest = features::write_stack(&stack, Some(arm), &tiles, &a.out)?;
    println!(
        "arm {arm}: {} channels {:?}, {} tiles",
        manifest.channels.len(),
        stack.names(),
        manifest.tiles.len()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = nifti::read_labels(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let truth = nifti::read_labels(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    let mode = if a.hd_region { HdPoints::Region } else { HdPoints::Boundary };
    let report = metrics::evaluate_with(&pred, &truth, mode)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("report.csv"), &report.to_csv())?;
    write_text(&a.out.join("report.json"), &report.to_json())?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_recover(a: &RecoverArgs) -> Result<()> {
    let g = LatticeGeometry::with_unit_spacing(&a.grid)?;
    let t0 = recovery::synthesize_t0(&g, a.amplitude, a.seed)?;
    let problem = RecoveryProblem {
        smooth_weight: a.lambda,
        max_iters: a.iters,
        ..RecoveryProblem::from_map(&t0)
    };
    let result = recovery::recover(&problem)?;
    let errors = result.map.node_errors_cells(&t0)?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let max = errors.iter().cloned().fold(0.0, f64::max);
    create_dir(&a.out)?;
    write_text(&a.out.join("loss.csv"), &result.trace_csv())?;
    write_grid(&result.map, a.out.join("recovered_grid.txt"))?;
    write_grid(&t0, a.out.join("target_grid.txt"))?;
    let summary = json!({
        "grid": a.grid,
        "amplitude": a.amplitude,
        "seed": a.seed,
        "lambda": a.lambda,
        "iterations": result.iterations(),
        "converged": result.converged,
        "final_loss": result.loss_history.last(),
        "mean_node_error_cells": mean,
        "max_node_error_cells": max,
    });
    write_text(&a.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "iterations {} (converged: {}), mean node error {mean:.3e} cells, max {max:.3e} cells",
        result.iterations(),
        result.converged
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Stack(a) => cmd_stack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Recover(a) => cmd_recover(a),
    }
}
