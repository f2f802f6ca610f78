//! Voxel-SDF grids and the operations that produce or consume them.

mod marching_cubes;
mod render;
pub mod tables;
mod tsdf;

pub use marching_cubes::marching_cubes;
pub use render::{render_mesh_depth, sdf_pseudo_depth, sdf_pseudo_depth_of, PseudoDepth};
pub use tsdf::{tsdf_fuse, FusionConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraGeometry, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("voxel index ({0}, {1}, {2}) outside grid dims {3:?}")]
    IndexOutOfRange(usize, usize, usize, [usize; 3]),
    #[error("no views to fuse")]
    EmptyViews,
    #[error("view {0} has no depth map")]
    MissingDepth(usize),
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
    #[error("grids are not on the same voxel lattice")]
    LatticeMismatch,
}

/// Placement of a regular voxel lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// World position of the center of voxel (0, 0, 0).
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
}

impl GridGeometry {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self, VoxelError> {
        let g = Self {
            origin: origin.into(),
            voxel_size,
            dims,
            truncation,
        };
        g.validate()?;
        Ok(g)
    }

    /// A `dims` grid centered on `center`.
    pub fn centered(center: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Self {
        let half = Vec3::new(
            (dims[0] - 1) as f64,
            (dims[1] - 1) as f64,
            (dims[2] - 1) as f64,
        ) * voxel_size
            / 2.0;
        Self {
            origin: (center - half).into(),
            voxel_size,
            dims,
            truncation,
        }
    }

    pub fn validate(&self) -> Result<(), VoxelError> {
        if !(self.voxel_size > 0.0) {
            return Err(VoxelError::InvalidConfig(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if !(self.truncation > 0.0) {
            return Err(VoxelError::InvalidConfig(format!(
                "truncation must be positive, got {}",
                self.truncation
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(VoxelError::InvalidConfig(format!(
                "dims must be at least 1, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.origin)
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        (i, j, k)
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.unravel(idx);
        self.origin() + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// World position of the far corner voxel center.
    pub fn max_center(&self) -> Vec3 {
        self.origin()
            + Vec3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * self.voxel_size
    }

    /// Integer offset of `other`'s origin in units of this lattice, when both
    /// grids share voxel size and alignment.
    pub fn lattice_offset(&self, other: &GridGeometry) -> Result<[i64; 3], VoxelError> {
        if (self.voxel_size - other.voxel_size).abs() > 1e-12 * self.voxel_size.max(1.0) {
            return Err(VoxelError::LatticeMismatch);
        }
        let mut off = [0i64; 3];
        for a in 0..3 {
            let f = (other.origin[a] - self.origin[a]) / self.voxel_size;
            let r = f.round();
            if (f - r).abs() > 1e-6 {
                return Err(VoxelError::LatticeMismatch);
            }
            off[a] = r as i64;
        }
        Ok(off)
    }
}

/// SDF values on a voxel lattice with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub geometry: GridGeometry,
    pub sdf: Vec<f64>,
    pub valid: Vec<bool>,
}

impl VoxelGrid {
    /// All voxels invalid, SDF at `+truncation`.
    pub fn new(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            sdf: vec![geometry.truncation; n],
            valid: vec![false; n],
        }
    }

    /// Every voxel valid with the same value.
    pub fn constant(geometry: GridGeometry, value: f64) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            sdf: vec![value.clamp(-geometry.truncation, geometry.truncation); n],
            valid: vec![true; n],
        }
    }

    /// Voxels whose centers project inside at least `min_views` of the
    /// cameras become valid with value `value`.
    pub fn observed(geometry: GridGeometry, cams: &[CameraGeometry], min_views: usize, value: f64) -> Self {
        let mut g = Self::constant(geometry, value);
        for idx in 0..g.len() {
            let c = geometry.center_of(idx);
            let seen = cams
                .iter()
                .filter(|cam| cam.project_world(&c).is_some_and(|(_, px)| px.in_bounds))
                .count();
            g.valid[idx] = seen >= min_views;
            if !g.valid[idx] {
                g.sdf[idx] = geometry.truncation;
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.sdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sdf.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.geometry.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.geometry.truncation
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Result<Vec3, VoxelError> {
        let d = self.geometry.dims;
        if i >= d[0] || j >= d[1] || k >= d[2] {
            return Err(VoxelError::IndexOutOfRange(i, j, k, d));
        }
        Ok(self.geometry.center_of(self.geometry.linear(i, j, k)))
    }

    pub fn center_of(&self, idx: usize) -> Vec3 {
        self.geometry.center_of(idx)
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.valid[i]).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Clamp every value into `[-truncation, truncation]`.
    pub fn clamp_to_truncation(&mut self) {
        let t = self.geometry.truncation;
        self.sdf.iter_mut().for_each(|s| *s = s.clamp(-t, t));
    }

    /// Mean absolute difference over voxels valid in both grids (and passing
    /// `filter`), or `None` when there are none.
    pub fn mean_abs_diff(&self, other: &VoxelGrid, filter: impl Fn(usize) -> bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..self.len().min(other.len()) {
            if self.valid[i] && other.valid[i] && filter(i) {
                sum += (self.sdf[i] - other.sdf[i]).abs();
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}
