use rayon::prelude::*;

use super::VoxelGrid;
use crate::geometry::{CameraGeometry, Vec3};
use crate::losses::surface_point;
use crate::mesh::TriangleMesh;
use crate::raster::DepthMap;

const NEAR: f64 = 1e-3;

/// Sparse depth splatted from the SDF surface points of a grid, with the
/// voxel that won each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDepth {
    pub depth: DepthMap,
    /// Winning voxel per pixel.
    pub source: Vec<Option<usize>>,
    /// `d depth / d sdf` of the winning voxel (the `z` component of its ray).
    pub dz_dsdf: Vec<f64>,
}

/// Projects every valid voxel's surface point into `cam` and keeps the nearest
/// depth per pixel. Ties go to the lower voxel index.
pub fn sdf_pseudo_depth(grid: &VoxelGrid, cam: &CameraGeometry) -> PseudoDepth {
    sdf_pseudo_depth_of(grid, cam, &grid.valid_indices())
}

/// [`sdf_pseudo_depth`] restricted to the listed voxels (invalid ones are
/// still skipped).
pub fn sdf_pseudo_depth_of(grid: &VoxelGrid, cam: &CameraGeometry, voxels: &[usize]) -> PseudoDepth {
    let intr = &cam.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let splats: Vec<Option<(usize, f64, f64)>> = voxels
        .par_iter()
        .map(|&idx| {
            if !grid.valid[idx] {
                return None;
            }
            let v = cam.pose.transform(&grid.center_of(idx));
            if v.z <= 0.0 {
                return None;
            }
            let s = surface_point(&v, grid.sdf[idx]).ok()?;
            let (x, y) = crate::geometry::project(intr, &s)?.nearest(intr)?;
            Some((y * w + x, s.z, v.z / v.norm()))
        })
        .collect();

    let mut depth = vec![0.0; w * h];
    let mut source = vec![None; w * h];
    let mut dz = vec![0.0; w * h];
    for (&idx, splat) in voxels.iter().zip(splats) {
        let Some((p, z, dzds)) = splat else { continue };
        if source[p].is_none() || z < depth[p] || (z == depth[p] && source[p].is_some_and(|s| idx < s)) {
            depth[p] = z;
            source[p] = Some(idx);
            dz[p] = dzds;
        }
    }
    PseudoDepth {
        depth: DepthMap::from_vec(w, h, depth),
        source,
        dz_dsdf: dz,
    }
}

/// Z-buffer rasterization with perspective-correct depth. Geometry in front of
/// the near plane at 1 mm is clipped.
pub fn render_mesh_depth(mesh: &TriangleMesh, cam: &CameraGeometry) -> DepthMap {
    let intr = &cam.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|v| cam.pose.transform(v)).collect();

    for tri in &mesh.triangles {
        let poly = clip_near(&tri.map(|i| cam_verts[i]));
        if poly.len() < 3 {
            continue;
        }
        // screen position plus inverse depth
        let screen: Vec<(f64, f64, f64)> = poly
            .iter()
            .map(|p| {
                (
                    intr.fx * p.x / p.z + intr.cx,
                    intr.fy * p.y / p.z + intr.cy,
                    1.0 / p.z,
                )
            })
            .collect();
        for k in 1..screen.len() - 1 {
            raster_triangle([screen[0], screen[k], screen[k + 1]], w, h, &mut zbuf);
        }
    }
    DepthMap::from_vec(
        w,
        h,
        zbuf.into_iter().map(|z| if z.is_finite() { z } else { 0.0 }).collect(),
    )
}

fn clip_near(tri: &[Vec3; 3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR;
        let b_in = b.z >= NEAR;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

fn raster_triangle(v: [(f64, f64, f64); 3], w: usize, h: usize, zbuf: &mut [f64]) {
    let area = edge(v[0], v[1], v[2].0, v[2].1);
    if area.abs() < 1e-12 {
        return;
    }
    let min_x = v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_x = v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
    let min_y = v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_y = v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let tol = -1e-9 * area.abs();
    for y in min_y as usize..=max_y as usize {
        for x in min_x as usize..=max_x as usize {
            let (px, py) = (x as f64, y as f64);
            let w0 = edge(v[1], v[2], px, py) / area;
            let w1 = edge(v[2], v[0], px, py) / area;
            let w2 = edge(v[0], v[1], px, py) / area;
            if w0 * area.abs() < tol || w1 * area.abs() < tol || w2 * area.abs() < tol {
                continue;
            }
            let inv_z = w0 * v[0].2 + w1 * v[1].2 + w2 * v[2].2;
            if inv_z <= 0.0 {
                continue;
            }
            let z = 1.0 / inv_z;
            let slot = &mut zbuf[y * w + x];
            if z < *slot {
                *slot = z;
            }
        }
    }
}

fn edge(a: (f64, f64, f64), b: (f64, f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}
