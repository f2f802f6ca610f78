//! Analytic test scenes: textured planes, boxes, rooms and spheres with exact
//! signed distances and a ray caster that produces posed RGB + depth.
//!
//! Surfaces carry flat albedo (no shading), so the same surface point has the
//! same color from every viewpoint.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraGeometry, CameraView, Intrinsics, Pose, Vec3};
use crate::mesh::TriangleMesh;
use crate::raster::{DepthMap, Image};

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Procedural albedo as a function of the world-space hit point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    Solid {
        color: [f64; 3],
    },
    /// Alternating 3D cells; one light+dark cycle spans `period` meters.
    Checker {
        period: f64,
        color_a: [f64; 3],
        color_b: [f64; 3],
    },
    /// Linear blend along `direction` (per meter), clamped to the endpoints.
    Gradient {
        origin: [f64; 3],
        direction: [f64; 3],
        color_a: [f64; 3],
        color_b: [f64; 3],
    },
    /// Smooth fractal value noise around `base`.
    Noise {
        seed: u64,
        scale: f64,
        octaves: u32,
        base: [f64; 3],
        amplitude: f64,
    },
}

impl Texture {
    pub fn color(&self, p: &Vec3) -> [f64; 3] {
        let c = match self {
            Texture::Solid { color } => *color,
            Texture::Checker {
                period,
                color_a,
                color_b,
            } => {
                let half = period / 2.0;
                let parity = (p.x / half).floor() as i64
                    + (p.y / half).floor() as i64
                    + (p.z / half).floor() as i64;
                if parity.rem_euclid(2) == 0 {
                    *color_a
                } else {
                    *color_b
                }
            }
            Texture::Gradient {
                origin,
                direction,
                color_a,
                color_b,
            } => {
                let t = (p - Vec3::from(*origin))
                    .dot(&Vec3::from(*direction))
                    .clamp(0.0, 1.0);
                std::array::from_fn(|k| color_a[k] + t * (color_b[k] - color_a[k]))
            }
            Texture::Noise {
                seed,
                scale,
                octaves,
                base,
                amplitude,
            } => {
                let q = p / *scale;
                std::array::from_fn(|k| {
                    let n = fbm(&q, seed.wrapping_add(k as u64 * 0x9E37_79B9), *octaves);
                    base[k] + amplitude * (2.0 * n - 1.0)
                })
            }
        };
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = splitmix(
        seed ^ splitmix(ix as u64 ^ splitmix(iy as u64 ^ splitmix(iz as u64 ^ 0x5851_F42D))),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(p: &Vec3, seed: u64) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (fade(p.x - fx), fade(p.y - fy), fade(p.z - fz));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = if dx == 1 { tx } else { 1.0 - tx }
                    * if dy == 1 { ty } else { 1.0 - ty }
                    * if dz == 1 { tz } else { 1.0 - tz };
                acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

/// Fractal sum of value noise, normalized to `[0, 1]`.
fn fbm(p: &Vec3, seed: u64, octaves: u32) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves.max(1) {
        sum += amp * value_noise(&(p * freq), seed.wrapping_add(o as u64 * 7919));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Half-space solid bounded by `x[axis] = offset`; `outward` (+1/-1) is the
    /// side that is free space.
    Plane { axis: Axis, offset: f64, outward: f64 },
    /// Solid axis-aligned box. `face_tint` scales the albedo on faces whose
    /// normal lies along x, y, z.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default = "unit_tint")]
        face_tint: [f64; 3],
    },
    /// Hollow box: free space inside, solid outside. Tinted like `Box`.
    Room {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default = "unit_tint")]
        face_tint: [f64; 3],
    },
    Sphere { center: [f64; 3], radius: f64 },
}

fn unit_tint() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub texture: Texture,
}

#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub primitive: usize,
}

fn box_sdf(p: &Vec3, min: &[f64; 3], max: &[f64; 3]) -> f64 {
    let c = (Vec3::from(*min) + Vec3::from(*max)) / 2.0;
    let h = (Vec3::from(*max) - Vec3::from(*min)) / 2.0;
    let q = (p - c).abs() - h;
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

/// Slab test; returns `(t_enter, t_exit)` when the ray overlaps the box.
fn slab(o: &Vec3, d: &Vec3, min: &[f64; 3], max: &[f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

impl Shape {
    /// Exact signed distance, negative inside the solid.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Plane {
                axis,
                offset,
                outward,
            } => outward.signum() * (p[axis.index()] - offset),
            Shape::Box { min, max, .. } => box_sdf(p, min, max),
            Shape::Room { min, max, .. } => -box_sdf(p, min, max),
            Shape::Sphere { center, radius } => (p - Vec3::from(*center)).norm() - radius,
        }
    }

    /// Nearest boundary crossing along `o + t d` with `t > 0`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let t = match self {
            Shape::Plane { axis, offset, .. } => {
                let a = axis.index();
                if d[a].abs() < 1e-15 {
                    return None;
                }
                (offset - o[a]) / d[a]
            }
            Shape::Box { min, max, .. } | Shape::Room { min, max, .. } => {
                let (t0, t1) = slab(o, d, min, max)?;
                if t0 > HIT_EPS {
                    t0
                } else {
                    t1
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = o - Vec3::from(*center);
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let a = d.norm_squared();
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t0 = (-b - s) / a;
                if t0 > HIT_EPS {
                    t0
                } else {
                    (-b + s) / a
                }
            }
        };
        (t > HIT_EPS && t.is_finite()).then_some(t)
    }

    fn tint(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Box { min, max, face_tint } | Shape::Room { min, max, face_tint } => {
                let c = (Vec3::from(*min) + Vec3::from(*max)) / 2.0;
                let h = (Vec3::from(*max) - Vec3::from(*min)) / 2.0;
                let q = (p - c).abs() - h;
                let a = if q.x >= q.y && q.x >= q.z {
                    0
                } else if q.y >= q.z {
                    1
                } else {
                    2
                };
                face_tint[a]
            }
            _ => 1.0,
        }
    }
}

/// A collection of textured solids. Rays that miss everything are invalid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Self { primitives }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn raycast(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some(t) = prim.shape.intersect(o, d) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        point: o + d * t,
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    pub fn albedo(&self, hit: &Hit) -> [f64; 3] {
        let prim = &self.primitives[hit.primitive];
        let tint = prim.shape.tint(&hit.point);
        prim.texture.color(&hit.point).map(|c| (c * tint).clamp(0.0, 1.0))
    }

    /// Ray-cast RGB and depth (camera z of the nearest hit).
    pub fn render(&self, cam: &CameraGeometry) -> (Image, DepthMap) {
        let intr = &cam.intrinsics;
        let (w, h) = (intr.width, intr.height);
        let inv = cam.pose.inverse();
        let origin = cam.pose.center();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut rgb = vec![0.0; w * 3];
                let mut depth = vec![0.0; w];
                for x in 0..w {
                    let dir_cam = intr.unproject_dir(x as f64, y as f64);
                    let dir = inv.rotation * dir_cam;
                    if let Some(hit) = self.raycast(&origin, &dir) {
                        // dir_cam has unit z, so the ray parameter is camera depth
                        depth[x] = hit.t;
                        rgb[3 * x..3 * x + 3].copy_from_slice(&self.albedo(&hit));
                    }
                }
                (rgb, depth)
            })
            .collect();
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut depth = Vec::with_capacity(w * h);
        for (r, d) in rows {
            rgb.extend(r);
            depth.extend(d);
        }
        (Image::from_vec(w, h, 3, rgb), DepthMap::from_vec(w, h, depth))
    }

    pub fn render_view(&self, cam: &CameraGeometry) -> CameraView {
        let (image, depth) = self.render(cam);
        CameraView::new(*cam, image, Some(depth))
    }

    /// Signed distance to the union of all solids.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.shape.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Visible surface tessellated into patches of at most `patch` meters and
    /// clipped to the box `[lo, hi]`. Patches buried in another solid are
    /// dropped.
    pub fn surface_mesh(&self, lo: &Vec3, hi: &Vec3, patch: f64) -> TriangleMesh {
        let mut mesh = TriangleMesh::default();
        for (i, prim) in self.primitives.iter().enumerate() {
            let others = |p: &Vec3| {
                self.primitives
                    .iter()
                    .enumerate()
                    .any(|(j, q)| j != i && q.shape.sdf(p) < -1e-6)
            };
            match &prim.shape {
                Shape::Plane {
                    axis,
                    offset,
                    outward,
                } => {
                    let a = axis.index();
                    if *offset < lo[a] || *offset > hi[a] {
                        continue;
                    }
                    let mut rmin = *lo;
                    let mut rmax = *hi;
                    rmin[a] = *offset;
                    rmax[a] = *offset;
                    let mut n = Vec3::zeros();
                    n[a] = outward.signum();
                    add_rect(&mut mesh, &rmin, &rmax, &n, patch, &others);
                }
                Shape::Box { min, max, .. } | Shape::Room { min, max, .. } => {
                    let sign = if matches!(prim.shape, Shape::Room { .. }) {
                        -1.0
                    } else {
                        1.0
                    };
                    let (bmin, bmax) = (Vec3::from(*min), Vec3::from(*max));
                    for a in 0..3 {
                        for side in [0, 1] {
                            let mut rmin = bmin.sup(lo);
                            let mut rmax = bmax.inf(hi);
                            let off = if side == 0 { bmin[a] } else { bmax[a] };
                            if off < lo[a] || off > hi[a] {
                                continue;
                            }
                            rmin[a] = off;
                            rmax[a] = off;
                            if (0..3).any(|k| rmin[k] > rmax[k]) {
                                continue;
                            }
                            let mut n = Vec3::zeros();
                            n[a] = sign * if side == 0 { -1.0 } else { 1.0 };
                            add_rect(&mut mesh, &rmin, &rmax, &n, patch, &others);
                        }
                    }
                }
                Shape::Sphere { center, radius } => {
                    add_sphere(&mut mesh, &Vec3::from(*center), *radius, patch, lo, hi, &others);
                }
            }
        }
        mesh.recompute_normals();
        mesh
    }
}

fn add_rect(
    mesh: &mut TriangleMesh,
    rmin: &Vec3,
    rmax: &Vec3,
    normal: &Vec3,
    patch: f64,
    buried: &dyn Fn(&Vec3) -> bool,
) {
    let a = normal.iamax();
    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
    let nb = (((rmax[b] - rmin[b]) / patch).ceil() as usize).max(1);
    let nc = (((rmax[c] - rmin[c]) / patch).ceil() as usize).max(1);
    let point = |ib: usize, ic: usize| {
        let mut p = *rmin;
        p[b] = rmin[b] + (rmax[b] - rmin[b]) * ib as f64 / nb as f64;
        p[c] = rmin[c] + (rmax[c] - rmin[c]) * ic as f64 / nc as f64;
        p
    };
    for ib in 0..nb {
        for ic in 0..nc {
            let corners = [
                point(ib, ic),
                point(ib + 1, ic),
                point(ib + 1, ic + 1),
                point(ib, ic + 1),
            ];
            let center = corners.iter().sum::<Vec3>() / 4.0;
            if buried(&(center + normal * 1e-3)) {
                continue;
            }
            let area = (corners[1] - corners[0])
                .cross(&(corners[3] - corners[0]))
                .norm();
            if area <= 1e-12 {
                continue;
            }
            let base = mesh.vertices.len();
            mesh.vertices.extend_from_slice(&corners);
            // orient so the winding normal matches `normal`
            let wn = (corners[1] - corners[0]).cross(&(corners[2] - corners[0]));
            if wn.dot(normal) >= 0.0 {
                mesh.triangles.push([base, base + 1, base + 2]);
                mesh.triangles.push([base, base + 2, base + 3]);
            } else {
                mesh.triangles.push([base, base + 2, base + 1]);
                mesh.triangles.push([base, base + 3, base + 2]);
            }
        }
    }
}

fn add_sphere(
    mesh: &mut TriangleMesh,
    center: &Vec3,
    radius: f64,
    patch: f64,
    lo: &Vec3,
    hi: &Vec3,
    buried: &dyn Fn(&Vec3) -> bool,
) {
    use std::f64::consts::PI;
    let n_lat = ((PI * radius / patch).ceil() as usize).max(4);
    let n_lon = 2 * n_lat;
    let point = |i: usize, j: usize| {
        let th = PI * i as f64 / n_lat as f64;
        let ph = 2.0 * PI * j as f64 / n_lon as f64;
        center + radius * Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos())
    };
    let inside = |p: &Vec3| (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]);
    for i in 0..n_lat {
        for j in 0..n_lon {
            let q = [point(i, j), point(i + 1, j), point(i + 1, j + 1), point(i, j + 1)];
            for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                let area = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm();
                let c = (tri[0] + tri[1] + tri[2]) / 3.0;
                if area <= 1e-12 || !inside(&c) {
                    continue;
                }
                let n = (c - center).normalize();
                if buried(&(c + n * 1e-3)) {
                    continue;
                }
                let base = mesh.vertices.len();
                mesh.vertices.extend_from_slice(&tri);
                let wn = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
                if wn.dot(&n) >= 0.0 {
                    mesh.triangles.push([base, base + 1, base + 2]);
                } else {
                    mesh.triangles.push([base, base + 2, base + 1]);
                }
            }
        }
    }
}

/// Evenly spaced azimuth orbit of radius `radius` around `center` in the
/// horizontal (xy) plane, every camera aimed at `look_at` with world +z up.
pub fn make_orbit_trajectory(center: &Vec3, radius: f64, n_frames: usize, look_at: &Vec3) -> Vec<Pose> {
    make_arc_trajectory(center, radius, n_frames, look_at, 0.0, 360.0, false)
}

/// Cameras on a horizontal arc from `start_deg` to `end_deg` (azimuth about
/// +z). With `inclusive` the last camera sits at `end_deg`.
pub fn make_arc_trajectory(
    center: &Vec3,
    radius: f64,
    n_frames: usize,
    look_at: &Vec3,
    start_deg: f64,
    end_deg: f64,
    inclusive: bool,
) -> Vec<Pose> {
    let steps = if inclusive {
        n_frames.saturating_sub(1).max(1)
    } else {
        n_frames.max(1)
    };
    (0..n_frames)
        .map(|k| {
            let az = (start_deg + (end_deg - start_deg) * k as f64 / steps as f64).to_radians();
            let eye = center + radius * Vec3::new(az.cos(), az.sin(), 0.0);
            Pose::look_at(&eye, look_at, &Vec3::z())
        })
        .collect()
}

/// Ready-made fixtures shared by tests, the harness and the CLI.
pub mod fixtures {
    use super::*;

    /// Textured floor with a box resting on it. Faces of the box carry
    /// distinct tints so color segmentation separates them.
    pub fn box_scene() -> Scene {
        Scene::new(vec![
            Primitive {
                shape: Shape::Plane {
                    axis: Axis::Z,
                    offset: 0.0,
                    outward: 1.0,
                },
                texture: Texture::Noise {
                    seed: 11,
                    scale: 0.35,
                    octaves: 3,
                    base: [0.30, 0.55, 0.35],
                    amplitude: 0.25,
                },
            },
            Primitive {
                shape: Shape::Box {
                    min: [-0.26, -0.2, 0.0],
                    max: [0.26, 0.2, 0.4],
                    face_tint: [0.65, 0.85, 1.0],
                },
                texture: Texture::Noise {
                    seed: 23,
                    scale: 0.3,
                    octaves: 3,
                    base: [0.8, 0.45, 0.3],
                    amplitude: 0.2,
                },
            },
        ])
    }

    /// `n` cameras on a frontal arc around the box scene, looking at its
    /// center from above.
    pub fn box_rig(n: usize, width: usize, height: usize, focal: f64) -> Vec<CameraGeometry> {
        let intr = Intrinsics::centered(focal, width, height);
        make_arc_trajectory(
            &Vec3::new(0.0, 0.0, 0.85),
            1.25,
            n,
            &Vec3::new(0.0, 0.0, 0.15),
            -140.0,
            -40.0,
            true,
        )
        .into_iter()
        .map(|pose| CameraGeometry::new(intr, pose))
        .collect()
    }

    /// Inside of a 1 m textured box room; the walls, floor and ceiling carry
    /// distinct tints. Seen from inside it has no self-occlusion.
    pub fn box_room() -> Scene {
        Scene::new(vec![Primitive {
            shape: Shape::Room {
                min: [-0.5, -0.5, 0.0],
                max: [0.5, 0.5, 1.0],
                face_tint: [1.0, 0.75, 0.5],
            },
            texture: Texture::Noise {
                seed: 11,
                scale: 0.25,
                octaves: 3,
                base: [0.55, 0.5, 0.45],
                amplitude: 0.3,
            },
        }])
    }

    /// `n` cameras inside [`box_room`] on an arc behind the center, each
    /// aimed across the room at the opposite wall.
    pub fn room_rig(n: usize, width: usize, height: usize, focal: f64) -> Vec<CameraGeometry> {
        let intr = Intrinsics::centered(focal, width, height);
        (0..n)
            .map(|i| {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
                let a = (-60.0 + 120.0 * t).to_radians();
                let eye = Vec3::new(-0.3 * a.cos(), -0.3 * a.sin(), 0.55);
                let target = Vec3::new(0.5 * a.cos(), 0.5 * a.sin(), 0.35);
                CameraGeometry::new(intr, Pose::look_at(&eye, &target, &Vec3::z()))
            })
            .collect()
    }

    /// Full orbit around the box scene.
    pub fn box_orbit(n: usize, width: usize, height: usize, focal: f64) -> Vec<CameraGeometry> {
        let intr = Intrinsics::centered(focal, width, height);
        make_orbit_trajectory(&Vec3::new(0.0, 0.0, 1.0), 1.5, n, &Vec3::new(0.0, 0.0, 0.15))
            .into_iter()
            .map(|pose| CameraGeometry::new(intr, pose))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::world_to_cam;
    use approx::assert_abs_diff_eq;

    fn sphere(r: f64) -> Scene {
        Scene::new(vec![Primitive {
            shape: Shape::Sphere {
                center: [0.0; 3],
                radius: r,
            },
            texture: Texture::Solid { color: [1.0; 3] },
        }])
    }

    #[test]
    fn sphere_sdf_examples() {
        let s = sphere(1.0);
        assert_eq!(s.sdf(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(s.sdf(&Vec3::zeros()), -1.0);
    }

    #[test]
    fn box_sdf_matches_brute_force_surface_sampling() {
        let shape = Shape::Box {
            min: [-2.0, -2.0, 0.0],
            max: [2.0, 2.0, 3.0],
            face_tint: [1.0; 3],
        };
        let p = Vec3::new(1.5, 0.2, 1.1);
        // brute force: dense samples on all six faces
        let n = 200;
        let mut best = f64::INFINITY;
        let (lo, hi) = (Vec3::new(-2.0, -2.0, 0.0), Vec3::new(2.0, 2.0, 3.0));
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            for side in [lo[a], hi[a]] {
                for i in 0..=n {
                    for j in 0..=n {
                        let mut q = Vec3::zeros();
                        q[a] = side;
                        q[b] = lo[b] + (hi[b] - lo[b]) * i as f64 / n as f64;
                        q[c] = lo[c] + (hi[c] - lo[c]) * j as f64 / n as f64;
                        best = best.min((q - p).norm());
                    }
                }
            }
        }
        let d = shape.sdf(&p);
        assert_abs_diff_eq!(d, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.abs(), best, epsilon = 0.02);
        // hollow room flips the sign
        let room = Shape::Room {
            min: [-2.0, -2.0, 0.0],
            max: [2.0, 2.0, 3.0],
            face_tint: [1.0; 3],
        };
        assert_abs_diff_eq!(room.sdf(&p), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sdf_has_unit_gradient_away_from_medial_axes() {
        let scene = fixtures::box_scene();
        let h = 1e-4;
        let pts = [
            Vec3::new(0.0, -0.5, 0.2),
            Vec3::new(0.6, 0.1, 0.25),
            Vec3::new(0.1, 0.0, 0.7),
            Vec3::new(-0.8, 0.7, 0.3),
            Vec3::new(0.0, 0.0, 0.3),
        ];
        for p in pts {
            let g = Vec3::from_fn(|k, _| {
                let mut e = Vec3::zeros();
                e[k] = h;
                (scene.sdf(&(p + e)) - scene.sdf(&(p - e))) / (2.0 * h)
            });
            assert!((g.norm() - 1.0).abs() < 1e-3, "|grad| = {} at {p:?}", g.norm());
        }
    }

    #[test]
    fn fronto_parallel_wall_has_constant_depth() {
        let scene = Scene::new(vec![Primitive {
            shape: Shape::Plane {
                axis: Axis::Z,
                offset: 2.0,
                outward: -1.0,
            },
            texture: Texture::Solid { color: [0.5; 3] },
        }]);
        let cam = CameraGeometry::new(Intrinsics::centered(50.0, 32, 24), Pose::identity());
        let (img, depth) = scene.render(&cam);
        assert!(depth.data().iter().all(|&d| (d - 2.0).abs() < 1e-12));
        assert!(img.data().iter().all(|&c| c == 0.5));
    }

    #[test]
    fn checker_period_in_pixels() {
        // wall at z = 2; checker period 0.2 m => fx * 0.2 / 2 = 10 px at fx = 100
        let scene = Scene::new(vec![Primitive {
            shape: Shape::Plane {
                axis: Axis::Z,
                offset: 2.0,
                outward: -1.0,
            },
            texture: Texture::Checker {
                period: 0.2,
                color_a: [1.0; 3],
                color_b: [0.0; 3],
            },
        }]);
        let intr = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 40.3,
            cy: 20.3,
            width: 80,
            height: 40,
        };
        let (img, _) = scene.render(&CameraGeometry::new(intr, Pose::identity()));
        let row: Vec<f64> = (0..80).map(|x| img.get(x, 20, 0)).collect();
        for x in 0..70 {
            assert_eq!(row[x], row[x + 10], "period mismatch at x={x}");
        }
        for x in 0..75 {
            assert_ne!(row[x], row[x + 5], "half-period should flip at x={x}");
        }
    }

    #[test]
    fn missed_rays_are_invalid_and_black() {
        let scene = sphere(0.1);
        let pose = Pose::look_at(&Vec3::new(0.0, 0.0, -2.0), &Vec3::zeros(), &Vec3::y());
        let (img, depth) = scene.render(&CameraGeometry::new(Intrinsics::centered(40.0, 40, 40), pose));
        assert_eq!(depth.get(0, 0), 0.0);
        assert_eq!(img.pixel(0, 0), &[0.0, 0.0, 0.0]);
        assert!(depth.get(20, 20) > 0.0);
    }

    #[test]
    fn render_depth_is_ray_intersection() {
        let scene = fixtures::box_scene();
        let cam = fixtures::box_rig(3, 40, 30, 35.0)[1];
        let (_, depth) = scene.render(&cam);
        let inv = cam.pose.inverse();
        for (x, y) in [(3, 4), (20, 15), (35, 27), (10, 22)] {
            let d = depth.get(x, y);
            assert!(d > 0.0);
            let dir = inv.rotation * cam.intrinsics.unproject_dir(x as f64, y as f64);
            let p = cam.pose.center() + dir * d;
            assert!(scene.sdf(&p).abs() < 1e-9, "hit point off surface: {}", scene.sdf(&p));
        }
    }

    #[test]
    fn orbit_examples() {
        let c = Vec3::new(0.0, 0.0, 0.0);
        let poses = make_orbit_trajectory(&c, 1.0, 4, &c);
        assert_eq!(poses.len(), 4);
        for k in 0..4 {
            let ang = crate::geometry::rotation_angle_deg(&poses[k], &poses[(k + 1) % 4]);
            assert_abs_diff_eq!(ang, 90.0, epsilon = 1e-9);
            let az = (90.0 * k as f64).to_radians();
            assert_abs_diff_eq!(poses[k].center(), Vec3::new(az.cos(), az.sin(), 0.0), epsilon = 1e-12);
        }
        assert_eq!(make_orbit_trajectory(&c, 1.0, 1, &c).len(), 1);
        let target = Vec3::new(0.1, 0.2, -0.5);
        for p in make_orbit_trajectory(&Vec3::new(0.0, 0.0, 1.0), 2.0, 7, &target) {
            let q = world_to_cam(&p, &target);
            assert!(q.x.abs() < 1e-9 && q.y.abs() < 1e-9);
        }
    }

    #[test]
    fn textures_are_deterministic_and_in_range() {
        let t = Texture::Noise {
            seed: 5,
            scale: 0.2,
            octaves: 4,
            base: [0.5; 3],
            amplitude: 0.6,
        };
        let p = Vec3::new(0.31, -0.7, 1.9);
        assert_eq!(t.color(&p), t.color(&p));
        for i in 0..500 {
            let q = Vec3::new(i as f64 * 0.013, (i as f64 * 0.7).sin(), -0.2 * i as f64);
            assert!(t.color(&q).iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn multiview_photometric_consistency_of_ground_truth() {
        let scene = fixtures::box_scene();
        let views: Vec<CameraView> = fixtures::box_rig(4, 160, 120, 140.0)
            .iter()
            .map(|c| scene.render_view(c))
            .collect();
        let (a, b) = (&views[0], &views[1]);
        let depth = a.depth.as_ref().unwrap();
        let inv = a.geometry.pose.inverse();
        let mut errs = Vec::new();
        for y in (0..120).step_by(3) {
            for x in (0..160).step_by(3) {
                let d = depth.get(x, y);
                if d <= 0.0 {
                    continue;
                }
                let world = inv.transform(&a.geometry.intrinsics.unproject(x as f64, y as f64, d));
                let Some((cb, pb)) = b.geometry.project_world(&world) else { continue };
                if !pb.in_bounds {
                    continue;
                }
                // skip points occluded in b
                let Some((bx, by)) = pb.nearest(&b.geometry.intrinsics) else { continue };
                let db = b.depth.as_ref().unwrap().get(bx, by);
                if (db - cb.z).abs() > 0.02 {
                    continue;
                }
                let sb = crate::geometry::bilinear_sample(&b.image, &pb).unwrap();
                let sa = a.image.pixel(x, y);
                let e: f64 = (0..3).map(|c| (sa[c] - sb[c]).abs()).sum::<f64>() / 3.0;
                errs.push(e);
            }
        }
        assert!(errs.len() > 200);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mean < 0.05, "mean photometric disagreement {mean}");
    }

    #[test]
    fn surface_mesh_lies_on_surface() {
        let scene = fixtures::box_scene();
        let lo = Vec3::new(-0.6, -0.6, -0.3);
        let hi = Vec3::new(0.6, 0.6, 0.9);
        let mesh = scene.surface_mesh(&lo, &hi, 0.05);
        assert!(!mesh.triangles.is_empty());
        for v in &mesh.vertices {
            assert!(scene.sdf(v).abs() < 1e-9);
        }
        // the box bottom and the floor beneath the box are buried
        for t in &mesh.triangles {
            let c = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
            let under_box = c.z.abs() < 1e-9 && c.x.abs() < 0.25 && c.y.abs() < 0.19;
            assert!(!under_box, "buried patch at {c:?}");
        }
    }

    #[test]
    fn scene_toml_roundtrip() {
        let s = fixtures::box_scene();
        let text = s.to_toml();
        assert_eq!(Scene::from_toml(&text).unwrap(), s);
    }
}
