use super::{LossError, LossValue};
use crate::geometry::CameraView;
use crate::raster::DepthMap;
use crate::voxel::{sdf_pseudo_depth_of, VoxelGrid};

fn check_shape(a: &DepthMap, b: &DepthMap) -> Result<(), LossError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(LossError::SizeMismatch(format!(
            "depth {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

/// Jointly valid pixels sorted by `reference / target`, ties by pixel index.
fn sorted_ratios(reference: &DepthMap, target: &DepthMap) -> Vec<(f64, usize)> {
    let mut r: Vec<(f64, usize)> = reference
        .data()
        .iter()
        .zip(target.data())
        .enumerate()
        .filter(|(_, (&a, &b))| a > 0.0 && b > 0.0)
        .map(|(i, (&a, &b))| (a / b, i))
        .collect();
    r.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    r
}

/// Middle element(s) of a sorted list with their averaging weights.
fn median_terms(sorted: &[(f64, usize)]) -> Vec<(usize, f64)> {
    let n = sorted.len();
    if n % 2 == 1 {
        vec![(sorted[n / 2].1, 1.0)]
    } else {
        vec![(sorted[n / 2 - 1].1, 0.5), (sorted[n / 2].1, 0.5)]
    }
}

/// Median over jointly valid pixels of `reference / target`.
pub fn recover_scale(reference: &DepthMap, target: &DepthMap) -> Result<f64, LossError> {
    check_shape(reference, target)?;
    let sorted = sorted_ratios(reference, target);
    if sorted.is_empty() {
        return Err(LossError::NoOverlap);
    }
    let at = |p: usize| reference.data()[p] / target.data()[p];
    Ok(median_terms(&sorted).into_iter().map(|(p, w)| w * at(p)).sum())
}

/// Scale-aligned depth agreement with per-pixel gradients for both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    pub scale: f64,
    pub count: usize,
    pub d_sdf: Vec<f64>,
    pub d_nerf: Vec<f64>,
}

/// Mean `|d_sdf - k d_nerf|` over jointly valid pixels, where `k` is the
/// median ratio. The gradient includes the dependence of `k` on both maps.
pub fn depth_consistency_loss(sdf_depth: &DepthMap, nerf_depth: &DepthMap) -> Result<DepthLoss, LossError> {
    check_shape(sdf_depth, nerf_depth)?;
    let sorted = sorted_ratios(sdf_depth, nerf_depth);
    if sorted.is_empty() {
        return Err(LossError::NoOverlap);
    }
    let (a, b) = (sdf_depth.data(), nerf_depth.data());
    let mid = median_terms(&sorted);
    let k: f64 = mid.iter().map(|&(p, w)| w * a[p] / b[p]).sum();
    let n = sorted.len() as f64;

    let mut d_sdf = vec![0.0; a.len()];
    let mut d_nerf = vec![0.0; a.len()];
    let mut value = 0.0;
    let mut dk = 0.0;
    for &(_, p) in &sorted {
        let r = a[p] - k * b[p];
        value += r.abs();
        let s = if r == 0.0 { 0.0 } else { r.signum() } / n;
        d_sdf[p] += s;
        d_nerf[p] -= k * s;
        dk -= s * b[p];
    }
    for (p, w) in mid {
        d_sdf[p] += dk * w / b[p];
        d_nerf[p] -= dk * w * a[p] / (b[p] * b[p]);
    }
    Ok(DepthLoss {
        value: value / n,
        scale: k,
        count: sorted.len(),
        d_sdf,
        d_nerf,
    })
}

/// Depth consistency summed over views, chained to voxel SDF values.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfDepthLoss {
    pub loss: LossValue,
    /// Per view, gradient on the NeRF depth pixels (empty when the view had no
    /// overlap).
    pub d_nerf: Vec<Vec<f64>>,
}

/// Renders the pseudo-depth of `voxels` into each view and compares it with
/// the matching NeRF depth. Views without overlap contribute nothing.
pub fn sdf_depth_loss(
    grid: &VoxelGrid,
    views: &[CameraView],
    nerf_depths: &[DepthMap],
    voxels: &[usize],
) -> Result<SdfDepthLoss, LossError> {
    if views.len() != nerf_depths.len() {
        return Err(LossError::SizeMismatch(format!(
            "{} depth maps for {} views",
            nerf_depths.len(),
            views.len()
        )));
    }
    let mut loss = LossValue::zero();
    let mut d_nerf = Vec::with_capacity(views.len());
    for (view, nerf) in views.iter().zip(nerf_depths) {
        let pseudo = sdf_pseudo_depth_of(grid, &view.geometry, voxels);
        match depth_consistency_loss(&pseudo.depth, nerf) {
            Ok(d) => {
                loss.value += d.value;
                loss.pair_count += d.count;
                for (p, &g) in d.d_sdf.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    if let Some(v) = pseudo.source[p] {
                        *loss.grad.entry(v).or_insert(0.0) += g * pseudo.dz_dsdf[p];
                    }
                }
                d_nerf.push(d.d_nerf);
            }
            Err(LossError::NoOverlap) => d_nerf.push(Vec::new()),
            Err(e) => return Err(e),
        }
    }
    Ok(SdfDepthLoss { loss, d_nerf })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: Vec<f64>) -> DepthMap {
        DepthMap::from_vec(v.len(), 1, v)
    }

    #[test]
    fn recover_scale_examples() {
        let r = map((1..=20).map(|i| i as f64 * 0.1).collect());
        assert!((recover_scale(&r, &r.scaled(2.0)).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(recover_scale(&r, &r).unwrap(), 1.0);

        let mut t: Vec<f64> = r.data().iter().map(|d| d * 2.0).collect();
        t[3] = r.data()[3] / 100.0;
        t[11] = r.data()[11] / 100.0;
        assert!((recover_scale(&r, &map(t)).unwrap() - 0.5).abs() < 1e-12);

        assert_eq!(recover_scale(&map(vec![1.0, 0.0]), &map(vec![0.0, 1.0])), Err(LossError::NoOverlap));
    }

    #[test]
    fn scale_is_absorbed() {
        let d = map((0..50).map(|i| 1.0 + (i as f64 * 0.7).sin().abs()).collect());
        assert!(depth_consistency_loss(&d, &d.scaled(3.0)).unwrap().value < 1e-9);
        assert_eq!(depth_consistency_loss(&d, &d).unwrap().value, 0.0);
    }

    #[test]
    fn single_outlier_formula() {
        let sdf = map(vec![2.0; 100]);
        let mut n = vec![2.0; 100];
        n[17] = 2.1;
        let l = depth_consistency_loss(&sdf, &map(n)).unwrap();
        assert_eq!(l.scale, 1.0);
        assert!((l.value - 0.1 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_differences() {
        let a: Vec<f64> = (0..31).map(|i| 1.0 + 0.3 * (i as f64 * 1.3).sin()).collect();
        let b: Vec<f64> = (0..31).map(|i| 0.5 + 0.2 * (i as f64 * 0.9).cos()).collect();
        let l = depth_consistency_loss(&map(a.clone()), &map(b.clone())).unwrap();
        let h = 1e-7;
        for p in 0..31 {
            let f = |da: f64, db: f64| {
                let mut a2 = a.clone();
                let mut b2 = b.clone();
                a2[p] += da;
                b2[p] += db;
                depth_consistency_loss(&map(a2), &map(b2)).unwrap().value
            };
            let ga = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
            let gb = (f(0.0, h) - f(0.0, -h)) / (2.0 * h);
            assert!((ga - l.d_sdf[p]).abs() < 1e-6, "pixel {p}: {ga} vs {}", l.d_sdf[p]);
            assert!((gb - l.d_nerf[p]).abs() < 1e-6, "pixel {p}: {gb} vs {}", l.d_nerf[p]);
        }
    }
}
