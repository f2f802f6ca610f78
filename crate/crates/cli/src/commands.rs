use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use voxrecon::config::{ConfigError, RunConfig};
use voxrecon::fusion::{integrate_fragment, make_fragments, select_keyframes, union_region, Fragment, GlobalGrid};
use voxrecon::geometry::{CameraGeometry, CameraView, Intrinsics, Vec3};
use voxrecon::io::{self, IoError};
use voxrecon::metrics::{depth_metrics, mesh_metrics, MeshMetricsConfig};
use voxrecon::mpi::{uniform_disparities, MpiStack};
use voxrecon::optimize::{history_csv, optimize_sdf, OptimError, Problem};
use voxrecon::superpixel::felzenszwalb_segment;
use voxrecon::synth::{fixtures, make_orbit_trajectory, Scene};
use voxrecon::voxel::{marching_cubes, render_mesh_depth, tsdf_fuse, FusionConfig, VoxelGrid};

use crate::{Builtin, EvalArgs, EvalKind, FuseArgs, GridFlags, InitMode, MeshArgs, OptimizeArgs, RenderDepthArgs, SynthArgs, TrajectoryKind};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Config(m) => CliError::Config(m),
            OptimError::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn frame_png(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:04}.png"))
}

fn depth_pfm(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("depth_{i:04}.pfm"))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let scene = match (&a.scene, a.builtin) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("scene file {}: {e}", path.display())))?;
            Scene::from_toml(&text).map_err(|e| CliError::Config(format!("scene file {}: {}", path.display(), e.message())))?
        }
        (None, Some(Builtin::Room)) => fixtures::box_room(),
        (None, _) => fixtures::box_scene(),
    };
    if a.frames == 0 {
        return Err(CliError::Config("--frames must be at least 1".into()));
    }
    if !(a.radius > 0.0) {
        return Err(CliError::Config("--radius must be positive".into()));
    }
    let intr = Intrinsics::new(a.focal, a.focal, (a.width as f64 - 1.0) / 2.0, (a.height as f64 - 1.0) / 2.0, a.width, a.height)
        .map_err(|e| CliError::Config(format!("camera: {e}")))?;
    let cams: Vec<CameraGeometry> = match a.trajectory {
        TrajectoryKind::Orbit => make_orbit_trajectory(
            &Vec3::new(0.0, 0.0, a.height_above),
            a.radius,
            a.frames,
            &Vec3::new(0.0, 0.0, 0.15),
        )
        .into_iter()
        .map(|p| CameraGeometry::new(intr, p))
        .collect(),
        TrajectoryKind::Arc => fixtures::box_rig(a.frames, a.width, a.height, a.focal),
        TrajectoryKind::Inside => fixtures::room_rig(a.frames, a.width, a.height, a.focal),
    };
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for (i, cam) in cams.iter().enumerate() {
        let (img, depth) = scene.render(cam);
        io::write_png(&frame_png(&a.out, i), &img)?;
        io::write_depth_pfm(&depth_pfm(&a.out, i), &depth)?;
    }
    io::write_trajectory(&a.out.join("trajectory.txt"), &cams)?;
    fs::write(a.out.join("scene.toml"), scene.to_toml()).map_err(|e| io_err(&a.out, e))?;
    println!("wrote {} views to {}", cams.len(), a.out.display());
    Ok(())
}

fn load_config(flags: &GridFlags) -> Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = flags.voxel_size {
        cfg.grid.voxel_size = v;
    }
    if let Some(v) = flags.truncation {
        cfg.grid.truncation = v;
    }
    if let Some(v) = flags.max_depth {
        cfg.grid.max_depth = v;
    }
    if let Some(v) = flags.fragment_dims {
        cfg.grid.fragment_dims = v;
    }
    if let Some(v) = flags.views_per_fragment {
        cfg.fragments.views_per_fragment = v;
    }
    Ok(cfg)
}

/// Views with images and (when present) depth maps.
fn load_views(dir: &Path) -> Result<Vec<CameraView>, CliError> {
    let cams = io::read_trajectory(&dir.join("trajectory.txt"))?;
    cams.iter()
        .enumerate()
        .map(|(i, cam)| {
            let image = io::read_png(&frame_png(dir, i))?;
            let dp = depth_pfm(dir, i);
            let depth = if dp.exists() { Some(io::read_depth_pfm(&dp)?) } else { None };
            if image.width() != cam.intrinsics.width || image.height() != cam.intrinsics.height {
                return Err(CliError::Io(format!("frame {i}: image size does not match the trajectory")));
            }
            Ok(CameraView::new(*cam, image, depth))
        })
        .collect()
}

fn plan_fragments(views: &[CameraView], cfg: &RunConfig) -> Result<Vec<Fragment>, CliError> {
    let cams: Vec<CameraGeometry> = views.iter().map(|v| v.geometry).collect();
    let poses: Vec<_> = cams.iter().map(|c| c.pose).collect();
    let keys = select_keyframes(&poses, &cfg.keyframes);
    let fc = cfg.fragment_config();
    if keys.len() < 2 {
        // a single keyframe still forms one fragment
        let mut f = make_fragments(&cams, &[keys[0], keys[0]], &fc).map_err(|e| CliError::Config(e.to_string()))?;
        f[0].frames.truncate(1);
        return Ok(f);
    }
    make_fragments(&cams, &keys, &fc).map_err(|e| CliError::Config(e.to_string()))
}

/// Per-fragment TSDF fusion integrated into the union of fragment regions.
fn fuse_fragments(views: &[CameraView], fragments: &[Fragment], cfg: &RunConfig) -> Result<VoxelGrid, CliError> {
    let regions: Vec<_> = fragments.iter().map(|f| f.region).collect();
    let global = union_region(&regions).map_err(|e| CliError::Config(e.to_string()))?;
    let mut acc = GlobalGrid::new(global);
    for f in fragments {
        let fv: Vec<CameraView> = f.frames.iter().map(|&i| views[i].clone()).collect();
        let grid = tsdf_fuse(
            &fv,
            &FusionConfig {
                grid: f.region,
                max_depth: cfg.grid.max_depth,
            },
        )
        .map_err(|e| match e {
            voxrecon::voxel::VoxelError::MissingDepth(i) => CliError::Io(format!("frame {} has no depth map", f.frames[i])),
            other => CliError::Config(other.to_string()),
        })?;
        integrate_fragment(&mut acc, &grid, cfg.fragments.integrate).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(acc.grid)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn fuse(a: &FuseArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.grid)?;
    cfg.validate()?;
    let views = load_views(&a.views)?;
    if views.is_empty() {
        return Err(CliError::Io(format!("{}: no views", a.views.display())));
    }
    let fragments = plan_fragments(&views, &cfg)?;
    let grid = fuse_fragments(&views, &fragments, &cfg)?;
    if grid.valid_count() == 0 {
        eprintln!("warning: fused grid has no valid voxels");
    }
    io::write_checkpoint(&a.out, &grid)?;
    let manifest = a.manifest.clone().unwrap_or_else(|| with_suffix(&a.out, ".fragments.txt"));
    fs::write(&manifest, io::format_manifest(&fragments)).map_err(|e| io_err(&manifest, e))?;
    println!(
        "fragments={} dims={:?} valid_voxels={}",
        fragments.len(),
        grid.dims(),
        grid.valid_count()
    );
    Ok(())
}

pub fn optimize(a: &OptimizeArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.grid)?;
    if let Some(n) = a.iterations {
        cfg.optimize.iterations = n;
    }
    if let Some(lr) = a.learning_rate {
        cfg.optimize.learning_rate = lr;
    }
    if a.mpi {
        cfg.optimize.optimize_mpi = true;
    } else {
        cfg.optimize.losses.depth = false;
        cfg.optimize.losses.nerf = false;
    }
    cfg.validate()?;
    let views = load_views(&a.views)?;
    if views.is_empty() {
        return Err(CliError::Io(format!("{}: no views", a.views.display())));
    }
    let fragments = plan_fragments(&views, &cfg)?;
    let init = match a.init {
        InitMode::Tsdf => fuse_fragments(&views, &fragments, &cfg)?,
        InitMode::Checkpoint => {
            let path = a.checkpoint.as_ref().expect("clap enforces --checkpoint");
            io::read_checkpoint(path)?
        }
        InitMode::Constant => {
            let regions: Vec<_> = fragments.iter().map(|f| f.region).collect();
            let geom = union_region(&regions).map_err(|e| CliError::Config(e.to_string()))?;
            let cams: Vec<_> = views.iter().map(|v| v.geometry).collect();
            VoxelGrid::observed(geom, &cams, 2, 0.5 * geom.truncation)
        }
    };
    let segments = views
        .iter()
        .map(|v| felzenszwalb_segment(&v.image, &cfg.segmentation).map_err(|e| CliError::Config(format!("segmentation: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut problem = Problem::from_fragments(&init, &views, &segments, &fragments, cfg.fragments.boundary_views);
    let mut mpis = Vec::new();
    if a.mpi {
        let disp = uniform_disparities(cfg.mpi.num_planes, cfg.mpi.min_depth, cfg.mpi.max_depth);
        for (term, f) in problem.fragments.iter_mut().zip(&fragments) {
            let src = views[f.frames[0]].geometry;
            term.mpi = Some(mpis.len());
            mpis.push(MpiStack::constant(src, disp.clone(), [0.5; 3], 0.5));
        }
    }
    let result = optimize_sdf(&init, &problem, &mpis, &cfg.optimize)?;
    io::write_checkpoint(&a.out, &result.grid)?;
    let csv = a.csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".csv"));
    fs::write(&csv, history_csv(&result.history)).map_err(|e| io_err(&csv, e))?;
    let first = result.history.first().map_or(f64::NAN, |r| r.total);
    let last = result.history.last().map_or(f64::NAN, |r| r.total);
    println!("steps={} loss {first} -> {last}", result.history.len() - 1);
    Ok(())
}

pub fn mesh(a: &MeshArgs) -> Result<(), CliError> {
    let grid = io::read_checkpoint(&a.checkpoint)?;
    let mesh = marching_cubes(&grid, 0.0);
    if mesh.is_empty() {
        eprintln!("warning: empty mesh");
    }
    io::write_ply(&a.out, &mesh)?;
    println!("vertices={} triangles={}", mesh.vertices.len(), mesh.triangles.len());
    Ok(())
}

pub fn render_depth(a: &RenderDepthArgs) -> Result<(), CliError> {
    let mesh = match (&a.mesh, &a.checkpoint) {
        (Some(p), _) => io::read_ply(p)?,
        (None, Some(p)) => marching_cubes(&io::read_checkpoint(p)?, 0.0),
        (None, None) => unreachable!("clap requires one source"),
    };
    let cams = io::read_trajectory(&a.trajectory)?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for (i, cam) in cams.iter().enumerate() {
        let d = render_mesh_depth(&mesh, cam);
        io::write_depth_pfm(&depth_pfm(&a.out, i), &d)?;
        io::write_depth_png16(&a.out.join(format!("depth_{i:04}.png")), &d)?;
    }
    println!("rendered {} depth maps", cams.len());
    Ok(())
}

fn print_metrics<T: serde::Serialize>(m: &T, json: bool) {
    let v = serde_json::to_value(m).expect("metrics serialize");
    if json {
        println!("{v}");
    } else {
        for (k, v) in v.as_object().expect("struct") {
            println!("{k}={v}");
        }
    }
}

fn depth_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("depth_") && n.ends_with(".pfm"))
        .collect();
    names.sort();
    Ok(names)
}

pub fn eval(a: &EvalArgs, seed: u64) -> Result<(), CliError> {
    if !(a.threshold > 0.0) {
        return Err(CliError::Config("--threshold must be positive".into()));
    }
    match a.kind {
        EvalKind::Depth => {
            let names = depth_files(&a.gt)?;
            if names.is_empty() {
                return Err(CliError::Io(format!("{}: no depth_*.pfm files", a.gt.display())));
            }
            let mut rows = Vec::new();
            for n in &names {
                let gt = io::read_depth_pfm(&a.gt.join(n))?;
                let pred = io::read_depth_pfm(&a.pred.join(n))?;
                match depth_metrics(&pred, &gt) {
                    Ok(m) => rows.push(m),
                    Err(voxrecon::metrics::MetricsError::NoOverlap) => eprintln!("warning: {n}: no overlap"),
                    Err(e) => return Err(CliError::Config(format!("{n}: {e}"))),
                }
            }
            if rows.is_empty() {
                return Err(CliError::Numeric("no frame had valid predictions".into()));
            }
            let k = rows.len() as f64;
            let mean = |f: fn(&voxrecon::metrics::DepthMetrics) -> f64| rows.iter().map(f).sum::<f64>() / k;
            let m = voxrecon::metrics::DepthMetrics {
                abs_rel: mean(|m| m.abs_rel),
                abs_diff: mean(|m| m.abs_diff),
                sq_rel: mean(|m| m.sq_rel),
                rmse: mean(|m| m.rmse),
                rmse_log: mean(|m| m.rmse_log),
                sc_inv: mean(|m| m.sc_inv),
                delta1: mean(|m| m.delta1),
                comp: mean(|m| m.comp),
            };
            print_metrics(&m, a.json);
        }
        EvalKind::Mesh => {
            let pred = io::read_ply(&a.pred)?;
            let gt = io::read_ply(&a.gt)?;
            let cfg = MeshMetricsConfig {
                threshold: a.threshold,
                n_samples: a.samples,
                seed,
            };
            let m = mesh_metrics(&pred, &gt, &cfg).map_err(|e| CliError::Numeric(e.to_string()))?;
            print_metrics(&m, a.json);
        }
    }
    Ok(())
}
