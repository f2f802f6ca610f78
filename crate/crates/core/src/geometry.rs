//! Pinhole cameras, rigid transforms, projection and bilinear sampling.
//!
//! Conventions used throughout the crate: right-handed frames, the camera
//! looks down `+z`, image `u` grows rightward and `v` downward, and integer
//! pixel coordinates address pixel centers.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{DepthMap, Image};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate point: norm {0:e} is below 1e-9")]
    DegeneratePoint(f64),
    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered principal point with a square focal length.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Camera-frame direction (z = 1) through pixel `(u, v)`.
    pub fn unproject_dir(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        self.unproject_dir(u, v) * depth
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Rigid transform mapping world coordinates to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, checking orthonormality and `det = +1` to 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let err = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if err > 1e-9 {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (max deviation {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera looking from `eye` toward `target` with world `up` mapping to
    /// image-up (negative `v`).
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(up);
        if right.norm() < 1e-9 {
            // looking along `up`; pick any perpendicular reference
            let alt = if forward.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            rotation,
            translation: -(rotation * eye),
        }
    }
}

/// Continuous pixel location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub in_bounds: bool,
}

impl Pixel {
    pub fn new(u: f64, v: f64, intr: &Intrinsics) -> Self {
        Self {
            u,
            v,
            in_bounds: intr.contains(u, v),
        }
    }

    /// Nearest integer pixel, if inside the image.
    pub fn nearest(&self, intr: &Intrinsics) -> Option<(usize, usize)> {
        let (x, y) = (self.u.round(), self.v.round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < intr.width && (y as usize) < intr.height {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }
}

pub fn world_to_cam(pose: &Pose, point: &Vec3) -> Vec3 {
    pose.transform(point)
}

/// Pinhole projection. `None` marks a point at or behind the camera plane.
pub fn project(intr: &Intrinsics, cam_point: &Vec3) -> Option<Pixel> {
    if cam_point.z <= 0.0 {
        return None;
    }
    let u = intr.fx * cam_point.x / cam_point.z + intr.cx;
    let v = intr.fy * cam_point.y / cam_point.z + intr.cy;
    Some(Pixel::new(u, v, intr))
}

/// Jacobian of [`project`] with respect to the camera-frame point, as rows
/// `(du/dp, dv/dp)`.
pub fn project_jacobian(intr: &Intrinsics, p: &Vec3) -> [Vec3; 2] {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    [
        Vec3::new(intr.fx * iz, 0.0, -intr.fx * p.x * iz2),
        Vec3::new(0.0, intr.fy * iz, -intr.fy * p.y * iz2),
    ]
}

/// Unit vector from the camera center through `cam_point`.
pub fn ray_direction(cam_point: &Vec3) -> Result<Vec3, GeometryError> {
    let n = cam_point.norm();
    if n < 1e-9 {
        return Err(GeometryError::DegeneratePoint(n));
    }
    Ok(cam_point / n)
}

/// Four-neighbor bilinear blend, exact on the integer lattice.
pub fn bilinear_sample(image: &Image, p: &Pixel) -> Result<Vec<f64>, GeometryError> {
    let mut out = vec![0.0; image.channels()];
    bilinear_into(image, p, &mut out)?;
    Ok(out)
}

/// Like [`bilinear_sample`] but writes into `out` (length = channels).
pub fn bilinear_into(image: &Image, p: &Pixel, out: &mut [f64]) -> Result<(), GeometryError> {
    let cell = BilinearCell::locate(image.width(), image.height(), p.u, p.v).ok_or(
        GeometryError::OutOfBounds {
            u: p.u,
            v: p.v,
            width: image.width(),
            height: image.height(),
        },
    )?;
    cell.sample(image, out);
    Ok(())
}

/// The 2x2 neighborhood and fractional offsets of a bilinear lookup.
///
/// The cell is `floor` of the coordinate, clamped so the last row/column is
/// reached with fraction 1. Derivatives are those of the polynomial on that
/// cell.
#[derive(Debug, Clone, Copy)]
pub struct BilinearCell {
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
    pub x1: usize,
    pub y1: usize,
}

impl BilinearCell {
    pub fn locate(width: usize, height: usize, u: f64, v: f64) -> Option<Self> {
        if !(u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64) {
            return None;
        }
        let (x0, x1, fx) = axis_cell(u, width);
        let (y0, y1, fy) = axis_cell(v, height);
        Some(Self {
            x0,
            y0,
            fx,
            fy,
            x1,
            y1,
        })
    }

    pub fn weights(&self) -> [(usize, usize, f64); 4] {
        [
            (self.x0, self.y0, (1.0 - self.fx) * (1.0 - self.fy)),
            (self.x1, self.y0, self.fx * (1.0 - self.fy)),
            (self.x0, self.y1, (1.0 - self.fx) * self.fy),
            (self.x1, self.y1, self.fx * self.fy),
        ]
    }

    pub fn sample(&self, image: &Image, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (x, y, w) in self.weights() {
            if w == 0.0 {
                continue;
            }
            let px = image.pixel(x, y);
            for (o, &c) in out.iter_mut().zip(px) {
                *o += w * c;
            }
        }
    }

    /// Value plus `d/du` and `d/dv` per channel.
    pub fn sample_with_grad(&self, image: &Image, val: &mut [f64], du: &mut [f64], dv: &mut [f64]) {
        let p00 = image.pixel(self.x0, self.y0);
        let p10 = image.pixel(self.x1, self.y0);
        let p01 = image.pixel(self.x0, self.y1);
        let p11 = image.pixel(self.x1, self.y1);
        let (fx, fy) = (self.fx, self.fy);
        for c in 0..val.len() {
            let top = p00[c] + fx * (p10[c] - p00[c]);
            let bot = p01[c] + fx * (p11[c] - p01[c]);
            val[c] = top + fy * (bot - top);
            du[c] = (1.0 - fy) * (p10[c] - p00[c]) + fy * (p11[c] - p01[c]);
            dv[c] = bot - top;
        }
    }
}

fn axis_cell(x: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let mut i = x.floor() as usize;
    if i >= n - 1 {
        i = n - 2;
    }
    (i, i + 1, x - i as f64)
}

/// Transform mapping camera-`a` coordinates to camera-`b` coordinates.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    b.compose(&a.inverse())
}

/// Angle of the relative rotation between two poses, in degrees.
pub fn rotation_angle_deg(a: &Pose, b: &Pose) -> f64 {
    let rel = b.rotation * a.rotation.transpose();
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees().clamp(0.0, 180.0)
}

/// Rotation of `angle` radians about a unit axis (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}

/// Intrinsics and world-to-camera pose of a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGeometry {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl CameraGeometry {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    /// World point to camera frame and pixel; `None` behind the camera.
    pub fn project_world(&self, p: &Vec3) -> Option<(Vec3, Pixel)> {
        let c = self.pose.transform(p);
        project(&self.intrinsics, &c).map(|px| (c, px))
    }
}

/// A posed RGB observation with optional ground-truth depth.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub geometry: CameraGeometry,
    pub image: Image,
    pub depth: Option<DepthMap>,
}

impl CameraView {
    pub fn new(geometry: CameraGeometry, image: Image, depth: Option<DepthMap>) -> Self {
        Self {
            geometry,
            image,
            depth,
        }
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.geometry.intrinsics
    }

    pub fn pose(&self) -> &Pose {
        &self.geometry.pose
    }
}
