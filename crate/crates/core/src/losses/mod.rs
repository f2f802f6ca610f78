//! Self-supervised losses on voxel SDF values and their analytic gradients.
//!
//! Voxel gradients are sparse maps from linear voxel index to `dL/dsdf`,
//! iterated in index order so that every reduction is reproducible.

mod depth;
mod image;
mod photometric;
mod plane;

pub use depth::{depth_consistency_loss, recover_scale, sdf_depth_loss, DepthLoss, SdfDepthLoss};
pub use image::{nerf_loss, smooth_loss, smooth_loss_grad, ssim, ssim_grad, NerfLoss, RenderedPair};
pub use photometric::sdf_photometric_loss;
pub use plane::{coplanar_loss, fit_plane, PlaneParam};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ray_direction, GeometryError, Vec3};

pub type SparseGrad = BTreeMap<usize, f64>;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("depth maps share no valid pixel")]
    NoOverlap,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("plane fit is singular")]
    Singular,
    #[error("need at least {0} inputs, got {1}")]
    TooFew(usize, usize),
}

/// A scalar loss with its gradient on voxel SDF values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: SparseGrad,
    pub pair_count: usize,
}

impl LossValue {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Adds `w * other`.
    pub fn add_scaled(&mut self, other: &LossValue, w: f64) {
        self.value += w * other.value;
        self.pair_count += other.pair_count;
        for (&k, &g) in &other.grad {
            *self.grad.entry(k).or_insert(0.0) += w * g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_sdf: f64,
    pub lambda_plane: f64,
    pub lambda_depth: f64,
    pub lambda_nerf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sdf: 1.0,
            lambda_plane: 0.05,
            lambda_depth: 1.0,
            lambda_nerf: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda_sdf, self.lambda_plane, self.lambda_depth, self.lambda_nerf]
    }

    pub fn validate(&self) -> Result<(), String> {
        let names = ["lambda_sdf", "lambda_plane", "lambda_depth", "lambda_nerf"];
        for (n, w) in names.iter().zip(self.as_array()) {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("{n} must be a finite non-negative number, got {w}"));
            }
        }
        Ok(())
    }
}

/// Tunables shared by the voxel losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Ridge term of the plane fit.
    pub plane_eps: f64,
    /// Segments with fewer projected points are skipped.
    pub min_points: usize,
    /// Treat the fitted plane as a constant in the gradient.
    pub freeze_plane: bool,
    /// Huber threshold on per-channel photometric residuals; `None` is L1.
    pub huber_delta: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            plane_eps: 1e-6,
            min_points: 100,
            freeze_plane: false,
            huber_delta: None,
        }
    }
}

/// Point reached by moving `sdf` meters from `v_cam` along its camera ray.
pub fn surface_point(v_cam: &Vec3, sdf: f64) -> Result<Vec3, GeometryError> {
    Ok(v_cam + ray_direction(v_cam)? * sdf)
}

/// Weighted sum of `[sdf, plane, depth, nerf]` parts.
pub fn total_loss(parts: [&LossValue; 4], w: &LossWeights) -> LossValue {
    let mut out = LossValue::zero();
    for (p, lambda) in parts.iter().zip(w.as_array()) {
        if lambda != 0.0 {
            out.add_scaled(p, lambda);
        }
    }
    out
}
