//! Multiplane images: fronto-parallel color/density planes in a source camera,
//! rendered by alpha compositing or volumetric integration, and warped to
//! other views through plane homographies.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{relative_pose, BilinearCell, CameraGeometry, Intrinsics, Mat3, Pixel, Pose, Vec3};
use crate::raster::{DepthMap, Image};

/// Stand-in for an infinite last interval along a ray.
pub const FAR_DELTA: f64 = 1e10;

#[derive(Debug, Error, PartialEq)]
pub enum MpiError {
    #[error("an MPI needs at least one plane")]
    NoPlanes,
    #[error("disparities must be positive and strictly decreasing (index {0})")]
    NonMonotone(usize),
    #[error("plane {0} has the wrong size")]
    Shape(usize),
    #[error("plane {plane}: density {value} outside the allowed range")]
    SigmaRange { plane: usize, value: f64 },
    #[error("plane {plane}: color {value} outside [0, 1]")]
    ColorRange { plane: usize, value: f64 },
    #[error("degenerate homography (third coordinate {0:e})")]
    Degenerate(f64),
}

/// `N` planes at depths `1/d_i` in the source camera, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MpiStack {
    pub source: CameraGeometry,
    /// Strictly decreasing, so plane 0 is the nearest.
    pub disparities: Vec<f64>,
    /// RGB per plane, source resolution.
    pub colors: Vec<Image>,
    /// Non-negative density per plane, row-major source resolution.
    pub sigma: Vec<Vec<f64>>,
}

/// `n` disparities evenly spaced from `1/min_depth` down to `1/max_depth`.
pub fn uniform_disparities(n: usize, min_depth: f64, max_depth: f64) -> Vec<f64> {
    let (near, far) = (1.0 / min_depth, 1.0 / max_depth);
    if n == 1 {
        return vec![near];
    }
    (0..n).map(|i| near + (far - near) * i as f64 / (n - 1) as f64).collect()
}

impl MpiStack {
    /// Planes of constant color and density.
    pub fn constant(source: CameraGeometry, disparities: Vec<f64>, color: [f64; 3], sigma: f64) -> Self {
        let (w, h) = (source.intrinsics.width, source.intrinsics.height);
        let n = disparities.len();
        let mut img = Image::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                img.pixel_mut(x, y).copy_from_slice(&color);
            }
        }
        Self {
            source,
            disparities,
            colors: vec![img; n],
            sigma: vec![vec![sigma; w * h]; n],
        }
    }

    pub fn num_planes(&self) -> usize {
        self.disparities.len()
    }

    pub fn depth(&self, i: usize) -> f64 {
        1.0 / self.disparities[i]
    }

    pub fn validate(&self) -> Result<(), MpiError> {
        let n = self.disparities.len();
        if n == 0 {
            return Err(MpiError::NoPlanes);
        }
        for i in 0..n {
            let d = self.disparities[i];
            if !(d > 0.0 && d.is_finite()) || (i > 0 && d >= self.disparities[i - 1]) {
                return Err(MpiError::NonMonotone(i));
            }
        }
        let (w, h) = (self.source.intrinsics.width, self.source.intrinsics.height);
        if self.colors.len() != n || self.sigma.len() != n {
            return Err(MpiError::Shape(n.min(self.colors.len()).min(self.sigma.len())));
        }
        for i in 0..n {
            let c = &self.colors[i];
            if c.width() != w || c.height() != h || c.channels() != 3 || self.sigma[i].len() != w * h {
                return Err(MpiError::Shape(i));
            }
            if let Some(&v) = c.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(MpiError::ColorRange { plane: i, value: v });
            }
            if let Some(&v) = self.sigma[i].iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(MpiError::SigmaRange { plane: i, value: v });
            }
        }
        Ok(())
    }
}

/// Color, depth and residual transmittance per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    pub depth: Vec<f64>,
    pub transmittance: Vec<f64>,
}

impl RenderedView {
    pub fn depth_map(&self) -> DepthMap {
        DepthMap::from_vec(self.image.width(), self.image.height(), self.depth.clone())
    }
}

/// Gradients with respect to every plane's colors and densities.
#[derive(Debug, Clone, PartialEq)]
pub struct MpiGrad {
    pub d_color: Vec<Image>,
    pub d_sigma: Vec<Vec<f64>>,
}

impl MpiGrad {
    pub fn zeros_like(mpi: &MpiStack) -> Self {
        let (w, h) = (mpi.source.intrinsics.width, mpi.source.intrinsics.height);
        Self {
            d_color: vec![Image::new(w, h, 3); mpi.num_planes()],
            d_sigma: vec![vec![0.0; w * h]; mpi.num_planes()],
        }
    }

    pub fn add(&mut self, other: &MpiGrad) {
        for (a, b) in self.d_color.iter_mut().zip(&other.d_color) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.d_sigma.iter_mut().zip(&other.d_sigma) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Front-to-back "over" compositing with densities read as opacities:
/// `I = Σ c_i σ_i Π_{j<i} (1 - σ_j)`, depth likewise with `z_i`.
pub fn compose_over(mpi: &MpiStack) -> Result<RenderedView, MpiError> {
    mpi.validate()?;
    for (i, s) in mpi.sigma.iter().enumerate() {
        if let Some(&v) = s.iter().find(|v| **v > 1.0) {
            return Err(MpiError::SigmaRange { plane: i, value: v });
        }
    }
    let (w, h) = (mpi.source.intrinsics.width, mpi.source.intrinsics.height);
    let mut image = Image::new(w, h, 3);
    let mut depth = vec![0.0; w * h];
    let mut trans = vec![1.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            // back to front: out = c σ + (1 - σ) out
            let mut rgb = [0.0; 3];
            let mut z = 0.0;
            let mut t = 1.0;
            for i in (0..mpi.num_planes()).rev() {
                let s = mpi.sigma[i][p];
                let c = mpi.colors[i].pixel(x, y);
                for k in 0..3 {
                    rgb[k] = c[k] * s + (1.0 - s) * rgb[k];
                }
                z = mpi.depth(i) * s + (1.0 - s) * z;
                t *= 1.0 - s;
            }
            image.pixel_mut(x, y).copy_from_slice(&rgb);
            depth[p] = z;
            trans[p] = t;
        }
    }
    Ok(RenderedView {
        image,
        depth,
        transmittance: trans,
    })
}

/// One shading point along a ray.
#[derive(Debug, Clone, Copy)]
struct Sample {
    sigma: f64,
    color: [f64; 3],
    z: f64,
    delta: f64,
}

struct RayOut {
    rgb: [f64; 3],
    z: f64,
    t_final: f64,
}

fn integrate(samples: &[Sample]) -> RayOut {
    let mut t = 1.0;
    let mut rgb = [0.0; 3];
    let mut z = 0.0;
    for s in samples {
        let trans = (-s.sigma * s.delta).exp();
        let w = t * (1.0 - trans);
        for k in 0..3 {
            rgb[k] += w * s.color[k];
        }
        z += w * s.z;
        t *= trans;
    }
    RayOut { rgb, z, t_final: t }
}

/// `(dL/dσ_i, dL/dc_i)` for upstream gradients on color and depth.
fn integrate_backward(samples: &[Sample], g_rgb: &[f64; 3], g_z: f64) -> Vec<(f64, [f64; 3])> {
    let n = samples.len();
    let mut t = vec![1.0; n + 1];
    let mut w = vec![0.0; n];
    for (i, s) in samples.iter().enumerate() {
        let trans = (-s.sigma * s.delta).exp();
        w[i] = t[i] * (1.0 - trans);
        t[i + 1] = t[i] * trans;
    }
    let proj = |s: &Sample| s.color[0] * g_rgb[0] + s.color[1] * g_rgb[1] + s.color[2] * g_rgb[2] + s.z * g_z;
    let mut out = vec![(0.0, [0.0; 3]); n];
    let mut tail = 0.0; // Σ_{k>i} w_k (g·f_k)
    for i in (0..n).rev() {
        let s = &samples[i];
        let ds = if t[i + 1] == 0.0 && tail == 0.0 {
            0.0
        } else {
            s.delta * (t[i + 1] * proj(s) - tail)
        };
        out[i] = (ds, [w[i] * g_rgb[0], w[i] * g_rgb[1], w[i] * g_rgb[2]]);
        tail += w[i] * proj(s);
    }
    out
}

fn source_samples(mpi: &MpiStack, x: usize, y: usize) -> Vec<Sample> {
    let intr = &mpi.source.intrinsics;
    let len = intr.unproject_dir(x as f64, y as f64).norm();
    let n = mpi.num_planes();
    let p = y * intr.width + x;
    (0..n)
        .map(|i| {
            let c = mpi.colors[i].pixel(x, y);
            Sample {
                sigma: mpi.sigma[i][p],
                color: [c[0], c[1], c[2]],
                z: mpi.depth(i),
                delta: if i + 1 < n {
                    (mpi.depth(i + 1) - mpi.depth(i)) * len
                } else {
                    FAR_DELTA
                },
            }
        })
        .collect()
}

/// Volumetric rendering along the source rays, nearest plane first.
pub fn render_volumetric(mpi: &MpiStack) -> Result<RenderedView, MpiError> {
    mpi.validate()?;
    let intr = mpi.source.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let rows: Vec<Vec<RayOut>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| integrate(&source_samples(mpi, x, y))).collect())
        .collect();
    Ok(assemble(w, h, rows))
}

/// Gradient of `Σ g_img · I + Σ g_depth · Z` for [`render_volumetric`].
pub fn render_volumetric_backward(mpi: &MpiStack, g_image: &Image, g_depth: &[f64]) -> MpiGrad {
    let intr = mpi.source.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let mut grad = MpiGrad::zeros_like(mpi);
    let rows: Vec<Vec<Vec<(f64, [f64; 3])>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let g = g_image.pixel(x, y);
                    integrate_backward(&source_samples(mpi, x, y), &[g[0], g[1], g[2]], g_depth[y * w + x])
                })
                .collect()
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, per_plane) in row.into_iter().enumerate() {
            for (i, (ds, dc)) in per_plane.into_iter().enumerate() {
                grad.d_sigma[i][y * w + x] += ds;
                let px = grad.d_color[i].pixel_mut(x, y);
                for k in 0..3 {
                    px[k] += dc[k];
                }
            }
        }
    }
    grad
}

fn assemble(w: usize, h: usize, rows: Vec<Vec<RayOut>>) -> RenderedView {
    let mut image = Image::new(w, h, 3);
    let mut depth = vec![0.0; w * h];
    let mut trans = vec![0.0; w * h];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, r) in row.into_iter().enumerate() {
            image.pixel_mut(x, y).copy_from_slice(&r.rgb);
            depth[y * w + x] = r.z;
            trans[y * w + x] = r.t_final;
        }
    }
    RenderedView {
        image,
        depth,
        transmittance: trans,
    }
}

/// Homography taking target pixels to source pixels for the source-frame
/// plane `z = 1/disparity`, in the form `K_s (R - t n'ᵀ d') K_t⁻¹` where
/// `(R, t)` maps target to source coordinates, `n' = -Rᵀ e_z` and
/// `d' = 1 / (z - t_z)`.
pub fn plane_homography(
    source: &Intrinsics,
    target: &Intrinsics,
    target_to_source: &Pose,
    disparity: f64,
) -> Result<Mat3, MpiError> {
    let r = target_to_source.rotation;
    let t = target_to_source.translation;
    let denom = 1.0 / disparity - t.z;
    if denom.abs() < 1e-12 {
        return Err(MpiError::Degenerate(denom));
    }
    let n = -(r.transpose() * Vec3::z());
    let d = 1.0 / denom;
    Ok(source.matrix() * (r - t * n.transpose() * d) * target.inverse_matrix())
}

/// Source pixel seen through target pixel `(u, v)` on the plane at
/// `disparity`.
pub fn warp_plane_pixel(
    source: &Intrinsics,
    target: &Intrinsics,
    target_to_source: &Pose,
    disparity: f64,
    u: f64,
    v: f64,
) -> Result<Pixel, MpiError> {
    let hmg = plane_homography(source, target, target_to_source, disparity)?;
    apply_homography(&hmg, source, u, v)
}

fn apply_homography(hmg: &Mat3, source: &Intrinsics, u: f64, v: f64) -> Result<Pixel, MpiError> {
    let q = hmg * Vec3::new(u, v, 1.0);
    if q.z.abs() < 1e-12 {
        return Err(MpiError::Degenerate(q.z));
    }
    Ok(Pixel::new(q.x / q.z, q.y / q.z, source))
}

/// Pulls coordinates lying within rounding noise of the image border inside.
fn snap(x: f64, n: usize) -> f64 {
    let hi = (n - 1) as f64;
    if (-1e-9..0.0).contains(&x) {
        0.0
    } else if x > hi && x <= hi + 1e-9 {
        hi
    } else {
        x
    }
}

/// Per target pixel: samples in ray order plus the source cell and plane each
/// came from.
fn target_samples(
    mpi: &MpiStack,
    homs: &[Option<Mat3>],
    rel: &Pose,
    target: &CameraGeometry,
    x: usize,
    y: usize,
) -> Vec<(Sample, usize, Option<BilinearCell>)> {
    let src = &mpi.source.intrinsics;
    let dir = target.intrinsics.unproject_dir(x as f64, y as f64);
    let len = dir.norm();
    let along = (rel.rotation * dir).z;
    let mut hits: Vec<(f64, usize, Option<BilinearCell>)> = Vec::with_capacity(mpi.num_planes());
    for (i, hmg) in homs.iter().enumerate() {
        let Some(hmg) = hmg else { continue };
        let lambda = (mpi.depth(i) - rel.translation.z) / along;
        if !(lambda > 0.0 && lambda.is_finite()) {
            continue;
        }
        let cell = apply_homography(hmg, src, x as f64, y as f64)
            .ok()
            .and_then(|p| BilinearCell::locate(src.width, src.height, snap(p.u, src.width), snap(p.v, src.height)));
        hits.push((lambda, i, cell));
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::with_capacity(hits.len());
    for k in 0..hits.len() {
        let (lambda, i, cell) = hits[k];
        let mut color = [0.0; 3];
        let mut sigma = 0.0;
        if let Some(c) = cell {
            for (px, py, wgt) in c.weights() {
                let col = mpi.colors[i].pixel(px, py);
                for ch in 0..3 {
                    color[ch] += wgt * col[ch];
                }
                sigma += wgt * mpi.sigma[i][py * src.width + px];
            }
        }
        let delta = if k + 1 < hits.len() {
            (hits[k + 1].0 - lambda) * len
        } else {
            FAR_DELTA
        };
        out.push((
            Sample {
                sigma,
                color,
                z: lambda,
                delta,
            },
            i,
            cell,
        ));
    }
    out
}

fn homographies(mpi: &MpiStack, target: &CameraGeometry) -> (Pose, Vec<Option<Mat3>>) {
    let rel = relative_pose(&target.pose, &mpi.source.pose);
    let homs = mpi
        .disparities
        .iter()
        .map(|&d| plane_homography(&mpi.source.intrinsics, &target.intrinsics, &rel, d).ok())
        .collect();
    (rel, homs)
}

/// Renders the MPI from another camera: every plane is warped into the target
/// by its homography and the target ray is integrated with its own spacing.
/// Samples that fall outside the source image are empty.
pub fn render_target(mpi: &MpiStack, target: &CameraGeometry) -> Result<RenderedView, MpiError> {
    mpi.validate()?;
    let (w, h) = (target.intrinsics.width, target.intrinsics.height);
    let (rel, homs) = homographies(mpi, target);
    let rows: Vec<Vec<RayOut>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let s: Vec<Sample> = target_samples(mpi, &homs, &rel, target, x, y).into_iter().map(|t| t.0).collect();
                    integrate(&s)
                })
                .collect()
        })
        .collect();
    Ok(assemble(w, h, rows))
}

/// Gradient of `Σ g_img · I + Σ g_depth · Z` for [`render_target`].
pub fn render_target_backward(mpi: &MpiStack, target: &CameraGeometry, g_image: &Image, g_depth: &[f64]) -> MpiGrad {
    let (w, h) = (target.intrinsics.width, target.intrinsics.height);
    let sw = mpi.source.intrinsics.width;
    let (rel, homs) = homographies(mpi, target);
    type Scatter = Vec<(usize, BilinearCell, f64, [f64; 3])>;
    let rows: Vec<Vec<Scatter>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let ts = target_samples(mpi, &homs, &rel, target, x, y);
                    let samples: Vec<Sample> = ts.iter().map(|t| t.0).collect();
                    let g = g_image.pixel(x, y);
                    let back = integrate_backward(&samples, &[g[0], g[1], g[2]], g_depth[y * w + x]);
                    ts.iter()
                        .zip(back)
                        .filter_map(|((_, plane, cell), (ds, dc))| cell.map(|c| (*plane, c, ds, dc)))
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut grad = MpiGrad::zeros_like(mpi);
    for row in rows {
        for px in row {
            for (plane, cell, ds, dc) in px {
                for (sx, sy, wgt) in cell.weights() {
                    grad.d_sigma[plane][sy * sw + sx] += wgt * ds;
                    let c = grad.d_color[plane].pixel_mut(sx, sy);
                    for k in 0..3 {
                        c[k] += wgt * dc[k];
                    }
                }
            }
        }
    }
    grad
}
