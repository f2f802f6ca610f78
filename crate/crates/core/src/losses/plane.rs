use std::collections::BTreeMap;

use nalgebra::Cholesky;
use rayon::prelude::*;

use super::{LossConfig, LossError, LossValue};
use crate::geometry::{CameraView, Mat3, Vec3};
use crate::superpixel::SuperpixelMap;
use crate::voxel::VoxelGrid;

/// Plane `Aᵀx = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParam {
    pub a: Vec3,
    /// Root-mean-square of `Aᵀx - 1` over the fitted points.
    pub residual: f64,
}

fn normal_matrix(points: &[Vec3], eps: f64) -> (Mat3, Vec3) {
    let mut m = Mat3::identity() * eps;
    let mut b = Vec3::zeros();
    for p in points {
        m += p * p.transpose();
        b += p;
    }
    (m, b)
}

const REFINE_STEPS: usize = 3;

/// Solves the ridge system, then refines with `A <- M⁻¹(b + εA)` so the ridge
/// bias vanishes whenever `SᵀS` is well conditioned.
fn solve_plane(chol: &Cholesky<f64, nalgebra::U3>, b: &Vec3, eps: f64) -> Vec3 {
    let mut a = chol.solve(b);
    for _ in 0..REFINE_STEPS {
        a = chol.solve(&(b + a * eps));
    }
    a
}

/// Ridge-regularized least squares for `A` in `Aᵀx = 1`.
pub fn fit_plane(points: &[Vec3], eps: f64) -> Result<PlaneParam, LossError> {
    if points.len() < 3 {
        return Err(LossError::TooFew(3, points.len()));
    }
    let (m, b) = normal_matrix(points, eps);
    let chol = Cholesky::new(m).ok_or(LossError::Singular)?;
    let a = solve_plane(&chol, &b, eps);
    if !a.iter().all(|v| v.is_finite()) {
        return Err(LossError::Singular);
    }
    let ss: f64 = points.iter().map(|p| (a.dot(p) - 1.0).powi(2)).sum();
    Ok(PlaneParam {
        a,
        residual: (ss / points.len() as f64).sqrt(),
    })
}

fn sgn(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

struct SegmentTerm {
    sum: f64,
    count: usize,
    grads: Vec<(usize, f64)>,
}

/// L1 distance of each point to its radial projection onto the segment plane,
/// with gradients on the SDF values through the points and the fit.
fn segment_term(members: &[(usize, Vec3, Vec3)], cfg: &LossConfig) -> Option<SegmentTerm> {
    let pts: Vec<Vec3> = members.iter().map(|m| m.1).collect();
    let (m, b) = normal_matrix(&pts, cfg.plane_eps);
    let chol = Cholesky::new(m)?;
    let a = solve_plane(&chol, &b, cfg.plane_eps);
    if !a.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut sum = 0.0;
    let mut count = 0;
    // per member: (g, sign vector) for points that enter the loss
    let mut used: Vec<Option<(f64, Vec3)>> = Vec::with_capacity(pts.len());
    let mut w = Vec3::zeros();
    for s in &pts {
        let g = a.dot(s);
        if g.abs() < 1e-9 {
            used.push(None);
            continue;
        }
        let e = s * (1.0 - 1.0 / g);
        let sg = e.map(sgn);
        sum += e.abs().sum();
        count += 1;
        w += s * (s.dot(&sg) / (g * g));
        used.push(Some((g, sg)));
    }
    if count == 0 {
        return None;
    }
    let q = if cfg.freeze_plane { Vec3::zeros() } else { chol.solve(&w) };
    let mut grads = Vec::with_capacity(members.len());
    for ((idx, s, ray), u) in members.iter().zip(&used) {
        let mut d = Vec3::zeros();
        if let Some((g, sg)) = u {
            d += sg * (1.0 - 1.0 / g) + a * (s.dot(sg) / (g * g));
        }
        if !cfg.freeze_plane {
            let g = a.dot(s);
            d += q * (1.0 - g) - a * s.dot(&q);
        }
        grads.push((*idx, d.dot(ray)));
    }
    Some(SegmentTerm { sum, count, grads })
}

/// Co-planarity of the surface points that fall inside each superpixel.
///
/// For every view and segment with at least `min_points` voxel centers
/// projecting into it, the surface points are fitted with a plane and each
/// point is compared with its radial projection `s / (Aᵀs)` onto that plane.
/// The value is the mean L1 distance over all contributing points.
pub fn coplanar_loss(
    grid: &VoxelGrid,
    views: &[CameraView],
    segments: &[SuperpixelMap],
    voxels: &[usize],
    cfg: &LossConfig,
) -> Result<LossValue, LossError> {
    if segments.len() != views.len() {
        return Err(LossError::SizeMismatch(format!(
            "{} segmentations for {} views",
            segments.len(),
            views.len()
        )));
    }
    for (v, s) in views.iter().zip(segments) {
        if s.width != v.image.width() || s.height != v.image.height() {
            return Err(LossError::SizeMismatch(format!(
                "segmentation {}x{} vs image {}x{}",
                s.width,
                s.height,
                v.image.width(),
                v.image.height()
            )));
        }
    }

    // (view, label) -> members (voxel, surface point, ray), in voxel order
    let mut groups: BTreeMap<(usize, u32), Vec<(usize, Vec3, Vec3)>> = BTreeMap::new();
    for (vi, (view, seg)) in views.iter().zip(segments).enumerate() {
        let hits: Vec<Option<(u32, usize, Vec3, Vec3)>> = voxels
            .par_iter()
            .map(|&idx| {
                if !grid.valid[idx] {
                    return None;
                }
                let (v, px) = view.geometry.project_world(&grid.center_of(idx))?;
                let (x, y) = px.nearest(view.intrinsics())?;
                let n = v.norm();
                if n < 1e-9 {
                    return None;
                }
                let ray = v / n;
                Some((seg.label(x, y), idx, v + ray * grid.sdf[idx], ray))
            })
            .collect();
        for (label, idx, s, ray) in hits.into_iter().flatten() {
            groups.entry((vi, label)).or_default().push((idx, s, ray));
        }
    }

    let groups: Vec<Vec<(usize, Vec3, Vec3)>> = groups
        .into_values()
        .filter(|g| g.len() >= cfg.min_points.max(3))
        .collect();
    let terms: Vec<SegmentTerm> = groups.par_iter().filter_map(|g| segment_term(g, cfg)).collect();

    let count: usize = terms.iter().map(|t| t.count).sum();
    let mut out = LossValue::zero();
    if count == 0 {
        return Ok(out);
    }
    let inv = 1.0 / count as f64;
    for t in &terms {
        out.value += t.sum;
        for &(idx, g) in &t.grads {
            *out.grad.entry(idx).or_insert(0.0) += g * inv;
        }
    }
    out.value *= inv;
    out.pair_count = count;
    Ok(out)
}
