use rayon::prelude::*;

use super::{LossConfig, LossValue};
use crate::geometry::{project, project_jacobian, relative_pose, BilinearCell, CameraView, Pose, Vec3};
use crate::voxel::VoxelGrid;

fn penalty(r: f64, huber: Option<f64>) -> (f64, f64) {
    match huber {
        Some(d) if r.abs() <= d => (r * r / (2.0 * d), r / d),
        Some(d) => (r.abs() - d / 2.0, r.signum()),
        None => (r.abs(), if r == 0.0 { 0.0 } else { r.signum() }),
    }
}

/// Multi-view photometric consistency of the surface points implied by the
/// voxel SDF.
///
/// Each voxel in `voxels` (invalid ones are ignored) is projected into every
/// view `a`; its surface point is transferred into every other view `b`, and
/// the channel-summed absolute color difference is accumulated when both
/// pixels land inside their images. The total is divided by the number of
/// such directed pairs.
pub fn sdf_photometric_loss(
    grid: &VoxelGrid,
    views: &[CameraView],
    voxels: &[usize],
    cfg: &LossConfig,
) -> LossValue {
    if views.len() < 2 {
        return LossValue::zero();
    }
    let rel: Vec<Vec<Pose>> = views
        .iter()
        .map(|a| views.iter().map(|b| relative_pose(a.pose(), b.pose())).collect())
        .collect();
    let channels = views[0].image.channels();

    // (voxel, sum of penalties, d/dsdf of that sum, pair count)
    let per_voxel: Vec<(usize, f64, f64, usize)> = voxels
        .par_iter()
        .filter(|&&idx| grid.valid[idx])
        .map(|&idx| {
            let x = grid.center_of(idx);
            let s = grid.sdf[idx];
            let mut ref_color = vec![0.0; channels];
            let mut val = vec![0.0; channels];
            let mut du = vec![0.0; channels];
            let mut dv = vec![0.0; channels];
            let (mut sum, mut grad, mut count) = (0.0, 0.0, 0usize);
            for (a, va) in views.iter().enumerate() {
                let Some((v_cam, p)) = va.geometry.project_world(&x) else {
                    continue;
                };
                let Some(cell) = BilinearCell::locate(va.image.width(), va.image.height(), p.u, p.v) else {
                    continue;
                };
                let n = v_cam.norm();
                if n < 1e-9 {
                    continue;
                }
                cell.sample(&va.image, &mut ref_color);
                let ray = v_cam / n;
                let surf = v_cam + ray * s;
                for (b, vb) in views.iter().enumerate() {
                    if a == b {
                        continue;
                    }
                    let r = &rel[a][b];
                    let sb = r.transform(&surf);
                    let Some(pb) = project(vb.intrinsics(), &sb) else {
                        continue;
                    };
                    let Some(cb) = BilinearCell::locate(vb.image.width(), vb.image.height(), pb.u, pb.v) else {
                        continue;
                    };
                    cb.sample_with_grad(&vb.image, &mut val, &mut du, &mut dv);
                    let [ju, jv] = project_jacobian(vb.intrinsics(), &sb);
                    let dir: Vec3 = r.rotation * ray;
                    let (dus, dvs) = (ju.dot(&dir), jv.dot(&dir));
                    for c in 0..channels {
                        let (p, dp) = penalty(ref_color[c] - val[c], cfg.huber_delta);
                        sum += p;
                        grad -= dp * (du[c] * dus + dv[c] * dvs);
                    }
                    count += 1;
                }
            }
            (idx, sum, grad, count)
        })
        .collect();

    let total: usize = per_voxel.iter().map(|t| t.3).sum();
    let mut out = LossValue::zero();
    if total == 0 {
        return out;
    }
    let inv = 1.0 / total as f64;
    for (idx, sum, grad, count) in per_voxel {
        if count == 0 {
            continue;
        }
        out.value += sum;
        out.grad.insert(idx, grad * inv);
    }
    out.value *= inv;
    out.pair_count = total;
    out
}
