use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridGeometry, VoxelError, VoxelGrid};
use crate::geometry::CameraView;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub grid: GridGeometry,
    /// Depth samples beyond this range are ignored.
    pub max_depth: f64,
}

/// Projective TSDF fusion from depth maps with uniform weights.
///
/// A voxel becomes valid once at least one view observes it and the averaged
/// distance stays strictly inside the truncation band. Voxels that only ever
/// see free space beyond the band remain invalid.
pub fn tsdf_fuse(views: &[CameraView], config: &FusionConfig) -> Result<VoxelGrid, VoxelError> {
    if views.is_empty() {
        return Err(VoxelError::EmptyViews);
    }
    config.grid.validate()?;
    if let Some(i) = views.iter().position(|v| v.depth.is_none()) {
        return Err(VoxelError::MissingDepth(i));
    }
    let g = config.grid;
    let trunc = g.truncation;

    let fused: Vec<(f64, bool)> = (0..g.len())
        .into_par_iter()
        .map(|idx| {
            let center = g.center_of(idx);
            let mut sum = 0.0;
            let mut n = 0usize;
            for view in views {
                let Some((cam, px)) = view.geometry.project_world(&center) else {
                    continue;
                };
                let Some((x, y)) = px.nearest(view.intrinsics()) else {
                    continue;
                };
                let d = view.depth.as_ref().map_or(0.0, |dm| dm.get(x, y));
                if d <= 0.0 || d > config.max_depth {
                    continue;
                }
                let sd = d - cam.z;
                if sd < -trunc {
                    continue;
                }
                sum += sd.min(trunc);
                n += 1;
            }
            if n == 0 {
                return (trunc, false);
            }
            let avg = sum / n as f64;
            if avg.abs() < trunc {
                (avg, true)
            } else {
                (trunc, false)
            }
        })
        .collect();

    let (sdf, valid) = fused.into_iter().unzip();
    Ok(VoxelGrid {
        geometry: g,
        sdf,
        valid,
    })
}
