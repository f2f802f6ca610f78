//! Gradient descent on voxel SDF values (and optionally MPI fields) under
//! the weighted self-supervised loss.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::Fragment;
use crate::geometry::CameraView;
use crate::losses::{
    coplanar_loss, nerf_loss, sdf_depth_loss, sdf_photometric_loss, LossConfig, LossError, LossValue, LossWeights,
    RenderedPair,
};
use crate::mpi::{render_target, render_target_backward, MpiError, MpiGrad, MpiStack};
use crate::raster::{DepthMap, Image};
use crate::superpixel::SuperpixelMap;
use crate::voxel::VoxelGrid;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer setting: {0}")]
    Config(String),
    #[error("non-finite loss at step {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Mpi(#[from] MpiError),
}

/// Which loss terms take part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossToggles {
    pub photometric: bool,
    pub plane: bool,
    /// Needs MPIs.
    pub depth: bool,
    /// Needs MPIs.
    pub nerf: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            photometric: true,
            plane: true,
            depth: true,
            nerf: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Meters of SDF change per unit of gradient.
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum: f64,
    /// Backtracking gives up once the step has shrunk below this.
    pub min_learning_rate: f64,
    pub weights: LossWeights,
    pub losses: LossToggles,
    pub loss: LossConfig,
    /// Co-optimize MPI colors and densities when MPIs are supplied.
    pub optimize_mpi: bool,
    pub mpi_learning_rate: f64,
    /// Steps that use intra-fragment terms only before boundary terms join.
    pub warmup_iterations: usize,
    pub seed: u64,
    pub log_interval: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            iterations: 200,
            momentum: 0.9,
            min_learning_rate: 1e-9,
            weights: LossWeights::default(),
            losses: LossToggles::default(),
            loss: LossConfig::default(),
            optimize_mpi: false,
            mpi_learning_rate: 1.0,
            warmup_iterations: 0,
            seed: 0,
            log_interval: 10,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let err = |m: String| Err(OptimError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.min_learning_rate > 0.0) {
            return err(format!("min_learning_rate must be positive, got {}", self.min_learning_rate));
        }
        if self.optimize_mpi && !(self.mpi_learning_rate > 0.0 && self.mpi_learning_rate.is_finite()) {
            return err(format!("mpi_learning_rate must be positive, got {}", self.mpi_learning_rate));
        }
        self.weights.validate().map_err(OptimError::Config)
    }
}

/// Views, segmentations and voxels one loss term is evaluated on.
#[derive(Debug, Clone)]
pub struct Term {
    pub views: Vec<CameraView>,
    pub segments: Vec<SuperpixelMap>,
    pub voxels: Vec<usize>,
    /// Voxels that receive this term's gradient; `None` means all.
    pub trainable: Option<BTreeSet<usize>>,
    /// MPI rendered into every view of the term.
    pub mpi: Option<usize>,
}

/// Everything the loss is summed over.
#[derive(Debug, Clone, Default)]
pub struct Problem {
    pub fragments: Vec<Term>,
    /// Cross-fragment terms on the last views of one fragment and the first
    /// views of the next.
    pub boundaries: Vec<Term>,
}

/// Valid voxels of `grid` whose centers fall inside `region`.
fn voxels_in(grid: &VoxelGrid, region: &crate::voxel::GridGeometry) -> Vec<usize> {
    let Ok(off) = grid.geometry.lattice_offset(region) else {
        return Vec::new();
    };
    let g = grid.dims();
    let mut out = Vec::new();
    for k in 0..region.dims[2] {
        for j in 0..region.dims[1] {
            for i in 0..region.dims[0] {
                let p = [i as i64 + off[0], j as i64 + off[1], k as i64 + off[2]];
                if (0..3).all(|a| p[a] >= 0 && p[a] < g[a] as i64) {
                    let idx = grid.geometry.linear(p[0] as usize, p[1] as usize, p[2] as usize);
                    if grid.valid[idx] {
                        out.push(idx);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

impl Problem {
    /// One term over all views and all valid voxels.
    pub fn single(grid: &VoxelGrid, views: Vec<CameraView>, segments: Vec<SuperpixelMap>) -> Self {
        Self {
            fragments: vec![Term {
                views,
                segments,
                voxels: grid.valid_indices(),
                trainable: None,
                mpi: None,
            }],
            boundaries: Vec::new(),
        }
    }

    /// One term per fragment plus boundary terms that pair the last
    /// `boundary_views` of each fragment with the first of the next. Boundary
    /// gradients reach only voxels outside the earlier fragment.
    pub fn from_fragments(
        grid: &VoxelGrid,
        views: &[CameraView],
        segments: &[SuperpixelMap],
        fragments: &[Fragment],
        boundary_views: usize,
    ) -> Self {
        let pick = |frames: &[usize]| -> (Vec<CameraView>, Vec<SuperpixelMap>) {
            (
                frames.iter().map(|&f| views[f].clone()).collect(),
                frames.iter().map(|&f| segments[f].clone()).collect(),
            )
        };
        let mut p = Problem::default();
        let voxel_sets: Vec<Vec<usize>> = fragments.iter().map(|f| voxels_in(grid, &f.region)).collect();
        for (f, vox) in fragments.iter().zip(&voxel_sets) {
            let (v, s) = pick(&f.frames);
            p.fragments.push(Term {
                views: v,
                segments: s,
                voxels: vox.clone(),
                trainable: None,
                mpi: None,
            });
        }
        for w in 0..fragments.len().saturating_sub(1) {
            let (a, b) = (&fragments[w], &fragments[w + 1]);
            let tail = &a.frames[a.frames.len().saturating_sub(boundary_views)..];
            let head = &b.frames[..boundary_views.min(b.frames.len())];
            let frames: Vec<usize> = tail.iter().chain(head).copied().collect();
            let (v, s) = pick(&frames);
            let earlier: BTreeSet<usize> = voxel_sets[w].iter().copied().collect();
            let trainable = voxel_sets[w + 1].iter().copied().filter(|i| !earlier.contains(i)).collect();
            p.boundaries.push(Term {
                views: v,
                segments: s,
                voxels: voxel_sets[w + 1].clone(),
                trainable: Some(trainable),
                mpi: None,
            });
        }
        p
    }

    fn terms(&self, with_boundaries: bool) -> impl Iterator<Item = &Term> {
        self.fragments
            .iter()
            .chain(self.boundaries.iter().filter(move |_| with_boundaries))
    }
}

/// Loss parts, the weighted total and gradients at one parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `[sdf, plane, depth, nerf]`, each averaged over terms.
    pub parts: [f64; 4],
    pub total: f64,
    pub pair_count: usize,
    /// Dense over the grid; zero for frozen voxels.
    pub grad: Vec<f64>,
    pub mpi_grads: Vec<MpiGrad>,
}

fn add_grad(dense: &mut [f64], lv: &LossValue, w: f64, trainable: &Option<BTreeSet<usize>>) {
    for (&i, &g) in &lv.grad {
        if trainable.as_ref().is_none_or(|t| t.contains(&i)) {
            dense[i] += w * g;
        }
    }
}

/// Evaluates the weighted loss over every term of `problem`.
pub fn evaluate(
    grid: &VoxelGrid,
    problem: &Problem,
    mpis: &[MpiStack],
    cfg: &OptimConfig,
    with_boundaries: bool,
) -> Result<Evaluation, OptimError> {
    let w = cfg.weights.as_array();
    let n_terms = problem.terms(with_boundaries).count().max(1) as f64;
    let mut parts = [0.0; 4];
    let mut pair_count = 0;
    let mut grad = vec![0.0; grid.len()];
    let mut mpi_grads: Vec<MpiGrad> = mpis.iter().map(MpiGrad::zeros_like).collect();

    for term in problem.terms(with_boundaries) {
        if cfg.losses.photometric && w[0] != 0.0 {
            let l = sdf_photometric_loss(grid, &term.views, &term.voxels, &cfg.loss);
            parts[0] += l.value / n_terms;
            pair_count += l.pair_count;
            add_grad(&mut grad, &l, w[0] / n_terms, &term.trainable);
        }
        if cfg.losses.plane && w[1] != 0.0 {
            let l = coplanar_loss(grid, &term.views, &term.segments, &term.voxels, &cfg.loss)?;
            parts[1] += l.value / n_terms;
            pair_count += l.pair_count;
            add_grad(&mut grad, &l, w[1] / n_terms, &term.trainable);
        }
        let Some(mi) = term.mpi else { continue };
        let use_depth = cfg.losses.depth && w[2] != 0.0;
        let use_nerf = cfg.losses.nerf && w[3] != 0.0;
        if !use_depth && !use_nerf {
            continue;
        }
        let mpi = &mpis[mi];
        let rendered: Vec<_> = term
            .views
            .iter()
            .map(|v| render_target(mpi, &v.geometry))
            .collect::<Result<_, _>>()?;
        let mut g_img: Vec<Image> = term.views.iter().map(|v| Image::new(v.image.width(), v.image.height(), 3)).collect();
        let mut g_depth: Vec<Vec<f64>> = rendered.iter().map(|r| vec![0.0; r.depth.len()]).collect();
        if use_depth {
            let depths: Vec<DepthMap> = rendered.iter().map(|r| r.depth_map()).collect();
            let d = sdf_depth_loss(grid, &term.views, &depths, &term.voxels)?;
            parts[2] += d.loss.value / n_terms;
            pair_count += d.loss.pair_count;
            add_grad(&mut grad, &d.loss, w[2] / n_terms, &term.trainable);
            for (gd, dn) in g_depth.iter_mut().zip(&d.d_nerf) {
                gd.iter_mut().zip(dn).for_each(|(a, b)| *a += w[2] / n_terms * b);
            }
        }
        if use_nerf {
            let pairs: Vec<RenderedPair> = rendered
                .iter()
                .map(|r| RenderedPair {
                    image: r.image.clone(),
                    depth: r.depth.clone(),
                })
                .collect();
            let inputs: Vec<Image> = term.views.iter().map(|v| v.image.clone()).collect();
            let l = nerf_loss(&pairs, &inputs)?;
            parts[3] += l.value / n_terms;
            let s = w[3] / n_terms;
            for (gi, di) in g_img.iter_mut().zip(&l.d_image) {
                gi.data_mut().iter_mut().zip(di.data()).for_each(|(a, b)| *a += s * b);
            }
            for (gd, dd) in g_depth.iter_mut().zip(&l.d_depth) {
                gd.iter_mut().zip(dd).for_each(|(a, b)| *a += s * b);
            }
        }
        for ((v, gi), gd) in term.views.iter().zip(&g_img).zip(&g_depth) {
            mpi_grads[mi].add(&render_target_backward(mpi, &v.geometry, gi, gd));
        }
    }
    for (i, g) in grad.iter_mut().enumerate() {
        if !grid.valid[i] {
            *g = 0.0;
        }
    }
    let total = parts.iter().zip(w).map(|(p, w)| p * w).sum();
    Ok(Evaluation {
        parts,
        total,
        pair_count,
        grad,
        mpi_grads,
    })
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub parts: [f64; 4],
    pub total: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub grid: VoxelGrid,
    pub mpis: Vec<MpiStack>,
    /// Row 0 is the initial state; then one row per accepted step.
    pub history: Vec<HistoryRow>,
    /// Learning rate after backtracking.
    pub final_learning_rate: f64,
}

pub const CSV_HEADER: &str = "step,L_sdf,L_plane,L_depth,L_nerf,L_total,pair_count";

/// The loss history as CSV text.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, r.parts[0], r.parts[1], r.parts[2], r.parts[3], r.total, r.pair_count
        )
        .unwrap();
    }
    s
}

fn row(step: usize, e: &Evaluation) -> HistoryRow {
    HistoryRow {
        step,
        parts: e.parts,
        total: e.total,
        pair_count: e.pair_count,
    }
}

fn step_mpi(mpi: &MpiStack, vel: &mut MpiGrad, grad: &MpiGrad, lr: f64, momentum: f64) -> MpiStack {
    let mut out = mpi.clone();
    for i in 0..mpi.num_planes() {
        for ((c, v), g) in out.colors[i].data_mut().iter_mut().zip(vel.d_color[i].data_mut()).zip(grad.d_color[i].data()) {
            *v = momentum * *v - lr * g;
            *c = (*c + *v).clamp(0.0, 1.0);
        }
        for ((s, v), g) in out.sigma[i].iter_mut().zip(vel.d_sigma[i].iter_mut()).zip(&grad.d_sigma[i]) {
            *v = momentum * *v - lr * g;
            *s = (*s + *v).max(0.0);
        }
    }
    out
}

/// Gradient descent with momentum and backtracking: a step that would raise
/// the loss is retried at half the learning rate with the momentum reset, so
/// the recorded history never increases. Values stay within the truncation
/// band and invalid voxels never change.
pub fn optimize_sdf(
    init: &VoxelGrid,
    problem: &Problem,
    mpis: &[MpiStack],
    cfg: &OptimConfig,
) -> Result<OptimResult, OptimError> {
    cfg.validate()?;
    let mut grid = init.clone();
    let mut mpis = mpis.to_vec();
    let trunc = grid.truncation();
    let mut lr = cfg.learning_rate;
    let mut mpi_lr = cfg.mpi_learning_rate;
    let mut vel = vec![0.0; grid.len()];
    let mut mpi_vel: Vec<MpiGrad> = mpis.iter().map(MpiGrad::zeros_like).collect();
    let boundaries_at = |step: usize| cfg.warmup_iterations == 0 || step > cfg.warmup_iterations;

    let mut cur = evaluate(&grid, problem, &mpis, cfg, boundaries_at(0))?;
    if !cur.total.is_finite() {
        return Err(OptimError::NonFinite(0));
    }
    let mut history = vec![row(0, &cur)];
    let co_mpi = cfg.optimize_mpi && !mpis.is_empty();

    'steps: for step in 1..=cfg.iterations {
        let boundaries = boundaries_at(step);
        if boundaries != boundaries_at(step - 1) {
            // the objective changes when boundary terms join
            cur = evaluate(&grid, problem, &mpis, cfg, boundaries)?;
        }
        loop {
            let mut trial = grid.clone();
            let mut trial_vel = vel.clone();
            for i in 0..trial.len() {
                if !trial.valid[i] {
                    continue;
                }
                trial_vel[i] = cfg.momentum * vel[i] - lr * cur.grad[i];
                trial.sdf[i] = (trial.sdf[i] + trial_vel[i]).clamp(-trunc, trunc);
            }
            let mut trial_mpi_vel = mpi_vel.clone();
            let trial_mpis: Vec<MpiStack> = if co_mpi {
                mpis.iter()
                    .zip(trial_mpi_vel.iter_mut())
                    .zip(&cur.mpi_grads)
                    .map(|((m, v), g)| step_mpi(m, v, g, mpi_lr, cfg.momentum))
                    .collect()
            } else {
                mpis.clone()
            };
            let next = evaluate(&trial, problem, &trial_mpis, cfg, boundaries)?;
            if !next.total.is_finite() {
                return Err(OptimError::NonFinite(step));
            }
            if next.total <= cur.total {
                grid = trial;
                vel = trial_vel;
                mpis = trial_mpis;
                mpi_vel = trial_mpi_vel;
                cur = next;
                history.push(row(step, &cur));
                break;
            }
            lr *= 0.5;
            mpi_lr *= 0.5;
            vel.iter_mut().for_each(|v| *v = 0.0);
            mpi_vel = mpis.iter().map(MpiGrad::zeros_like).collect();
            if lr < cfg.min_learning_rate {
                break 'steps;
            }
        }
    }
    Ok(OptimResult {
        grid,
        mpis,
        history,
        final_learning_rate: lr,
    })
}

/// Central differences `(L(s + h) - L(s - h)) / 2h` at the given voxels.
pub fn finite_diff_grad(loss: impl Fn(&VoxelGrid) -> f64, grid: &VoxelGrid, voxels: &[usize], h: f64) -> Vec<f64> {
    let mut g = grid.clone();
    voxels
        .iter()
        .map(|&i| {
            let s = g.sdf[i];
            g.sdf[i] = s + h;
            let up = loss(&g);
            g.sdf[i] = s - h;
            let down = loss(&g);
            g.sdf[i] = s;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central difference at one voxel, or `None` when the loss is not smooth on
/// `[s - h, s + h]`. The slope changes between consecutive half-steps of a
/// smooth loss agree; a kink or jump shows up as one outlying change larger
/// than `rel_tol` times the slope magnitude.
pub fn smooth_finite_diff(
    loss: impl Fn(&VoxelGrid) -> f64,
    grid: &VoxelGrid,
    voxel: usize,
    h: f64,
    rel_tol: f64,
) -> Option<f64> {
    let mut g = grid.clone();
    let s = g.sdf[voxel];
    let vals: Vec<f64> = [-h, -0.5 * h, 0.0, 0.5 * h, h]
        .iter()
        .map(|d| {
            g.sdf[voxel] = s + d;
            loss(&g)
        })
        .collect();
    let slopes: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]) / (0.5 * h)).collect();
    let bends: Vec<f64> = slopes.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = slopes.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    let spread = bends.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) - bends.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if spread > rel_tol * scale {
        return None;
    }
    Some((vals[4] - vals[0]) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::synth::fixtures;
    use crate::voxel::{tsdf_fuse, FusionConfig, GridGeometry};

    #[test]
    fn finite_diff_examples() {
        let geom = GridGeometry::new(Vec3::zeros(), 0.1, [4, 3, 2], 0.3).unwrap();
        let mut grid = VoxelGrid::constant(geom, 0.0);
        for (i, s) in grid.sdf.iter_mut().enumerate() {
            *s = 0.01 * i as f64 - 0.1;
        }
        let idx: Vec<usize> = (0..grid.len()).collect();
        assert!(finite_diff_grad(|_| 3.0, &grid, &idx, 1e-4).iter().all(|&g| g == 0.0));
        let g = finite_diff_grad(|g| g.sdf.iter().map(|s| s * s).sum(), &grid, &idx, 1e-4);
        for (i, gi) in g.iter().enumerate() {
            assert!((gi - 2.0 * grid.sdf[i]).abs() < 1e-9);
        }
        assert!(smooth_finite_diff(|g| g.sdf[3].abs(), &grid, 3, 1e-4, 1e-3).is_some());
        grid.sdf[3] = 0.0;
        assert!(smooth_finite_diff(|g| g.sdf[3].abs(), &grid, 3, 1e-4, 1e-3).is_none());
    }

    fn setup() -> (VoxelGrid, Problem) {
        let scene = fixtures::box_scene();
        let views: Vec<CameraView> = fixtures::box_rig(3, 48, 36, 45.0)
            .iter()
            .map(|c| scene.render_view(c))
            .collect();
        let geom = GridGeometry::centered(Vec3::new(0.0, 0.0, 0.2), 0.06, [12, 10, 8], 0.18);
        let grid = tsdf_fuse(&views, &FusionConfig { grid: geom, max_depth: 3.0 }).unwrap();
        let segs = views
            .iter()
            .map(|v| crate::superpixel::felzenszwalb_segment(&v.image, &Default::default()).unwrap())
            .collect();
        let p = Problem::single(&grid, views, segs);
        (grid, p)
    }

    fn cfg() -> OptimConfig {
        OptimConfig {
            learning_rate: 50.0,
            iterations: 8,
            loss: LossConfig {
                min_points: 10,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (grid, p) = setup();
        let r = optimize_sdf(&grid, &p, &[], &OptimConfig { iterations: 0, ..cfg() }).unwrap();
        assert_eq!(r.grid, grid);
        assert_eq!(r.history.len(), 1);
    }

    #[test]
    fn zero_weights_are_identity() {
        let (grid, p) = setup();
        let c = OptimConfig {
            weights: LossWeights {
                lambda_sdf: 0.0,
                lambda_plane: 0.0,
                lambda_depth: 0.0,
                lambda_nerf: 0.0,
            },
            ..cfg()
        };
        let r = optimize_sdf(&grid, &p, &[], &c).unwrap();
        assert_eq!(r.grid, grid);
    }

    #[test]
    fn history_is_monotone_and_clamped() {
        let (mut grid, p) = setup();
        for i in grid.valid_indices() {
            grid.sdf[i] = (grid.sdf[i] + 0.05).min(grid.truncation());
        }
        let r = optimize_sdf(&grid, &p, &[], &cfg()).unwrap();
        assert!(r.history.windows(2).all(|w| w[1].total <= w[0].total));
        let t = grid.truncation();
        assert!(r.grid.sdf.iter().all(|s| s.abs() <= t));
        for i in 0..grid.len() {
            if !grid.valid[i] {
                assert_eq!(r.grid.sdf[i], grid.sdf[i]);
            }
        }
    }

    #[test]
    fn csv_format() {
        let rows = [HistoryRow {
            step: 0,
            parts: [0.5, 0.25, 0.0, 0.0],
            total: 0.5125,
            pair_count: 7,
        }];
        assert_eq!(history_csv(&rows), "step,L_sdf,L_plane,L_depth,L_nerf,L_total,pair_count\n0,0.5,0.25,0,0,0.5125,7\n");
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let bad = OptimConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(OptimError::Config(m)) if m.contains("learning_rate")));
        let bad = OptimConfig {
            weights: LossWeights {
                lambda_plane: -1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(OptimError::Config(m)) if m.contains("lambda_plane")));
    }
}
