//! 2D depth and 3D mesh evaluation metrics.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::mesh::TriangleMesh;
use crate::raster::DepthMap;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("depth maps differ in size")]
    SizeMismatch,
    #[error("no pixel is valid in both prediction and ground truth")]
    NoOverlap,
    #[error("mesh has no surface to sample")]
    EmptyMesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub abs_diff: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub sc_inv: f64,
    pub delta1: f64,
    pub comp: f64,
}

/// Metrics over pixels with valid ground truth; `comp` is the fraction of
/// those where the prediction is valid, the rest use jointly valid pixels.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics, MetricsError> {
    if !pred.same_shape(gt) {
        return Err(MetricsError::SizeMismatch);
    }
    let mut gt_valid = 0usize;
    let (mut n, mut abs_rel, mut abs_diff, mut sq_rel, mut sq, mut sq_log, mut z_sum, mut good) =
        (0usize, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
    for (&d, &g) in pred.data().iter().zip(gt.data()) {
        if !(g > 0.0) {
            continue;
        }
        gt_valid += 1;
        if !(d > 0.0) {
            continue;
        }
        n += 1;
        let e = d - g;
        abs_rel += e.abs() / g;
        abs_diff += e.abs();
        sq_rel += e * e / g;
        sq += e * e;
        let z = d.ln() - g.ln();
        sq_log += z * z;
        z_sum += z;
        if (d / g).max(g / d) < 1.25 {
            good += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoOverlap);
    }
    let nf = n as f64;
    let mean_z = z_sum / nf;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        abs_diff: abs_diff / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        sc_inv: (sq_log / nf - mean_z * mean_z).max(0.0).sqrt(),
        delta1: good as f64 / nf,
        comp: n as f64 / gt_valid as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshMetrics {
    pub acc: f64,
    pub comp: f64,
    pub prec: f64,
    pub recall: f64,
    pub fscore: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMetricsConfig {
    pub threshold: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for MeshMetricsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            n_samples: 10_000,
            seed: 0,
        }
    }
}

/// Distance from each query to its nearest neighbor in `cloud`.
fn nearest_distances(cloud: &[Vec3], queries: &[Vec3]) -> Vec<f64> {
    let pts: Vec<[f64; 3]> = cloud.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&pts);
    queries
        .par_iter()
        .map(|q| tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]).distance.sqrt())
        .collect()
}

/// Accuracy, completeness, precision, recall and F-score from area-uniform
/// point samples of both meshes. The ground-truth mesh is sampled with
/// `seed + 1` so that comparing a mesh with itself is not trivially exact.
pub fn mesh_metrics(pred: &TriangleMesh, gt: &TriangleMesh, cfg: &MeshMetricsConfig) -> Result<MeshMetrics, MetricsError> {
    let p = pred.sample_points(cfg.n_samples, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let g = gt.sample_points(cfg.n_samples, &mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)));
    if p.is_empty() || g.is_empty() {
        return Err(MetricsError::EmptyMesh);
    }
    Ok(point_metrics(&p, &g, cfg.threshold))
}

/// The mesh metrics on already sampled point sets.
pub fn point_metrics(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> MeshMetrics {
    let d_pred = nearest_distances(gt, pred);
    let d_gt = nearest_distances(pred, gt);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let frac = |v: &[f64]| v.iter().filter(|&&d| d < threshold).count() as f64 / v.len() as f64;
    let (prec, recall) = (frac(&d_pred), frac(&d_gt));
    let fscore = if prec + recall > 0.0 {
        2.0 * prec * recall / (prec + recall)
    } else {
        0.0
    };
    MeshMetrics {
        acc: mean(&d_pred),
        comp: mean(&d_gt),
        prec,
        recall,
        fscore,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> DepthMap {
        DepthMap::from_vec(w, h, (0..w * h).map(|i| 0.5 + 0.01 * i as f64).collect())
    }

    #[test]
    fn identity() {
        let g = ramp(8, 6);
        let m = depth_metrics(&g, &g).unwrap();
        assert_eq!((m.abs_rel, m.rmse, m.delta1, m.comp, m.sc_inv), (0.0, 0.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn constant_ratio_closed_forms() {
        let g = ramp(8, 6);
        let m = depth_metrics(&g.scaled(1.2), &g).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-12);
        assert_eq!(m.delta1, 1.0);
        assert!((m.rmse_log - 1.2f64.ln()).abs() < 1e-12);
        assert!(m.sc_inv < 1e-7);
        let sq_rel: f64 = g.data().iter().map(|d| 0.04 * d).sum::<f64>() / 48.0;
        assert!((m.sq_rel - sq_rel).abs() < 1e-12);

        assert_eq!(depth_metrics(&g.scaled(1.3), &g).unwrap().delta1, 0.0);
    }

    #[test]
    fn validity_rules() {
        let g = DepthMap::from_vec(4, 1, vec![1.0, 2.0, 0.0, 4.0]);
        let p = DepthMap::from_vec(4, 1, vec![1.0, 0.0, 3.0, 4.0]);
        let m = depth_metrics(&p, &g).unwrap();
        assert!((m.comp - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.abs_rel, 0.0);
        let none = DepthMap::from_vec(4, 1, vec![0.0; 4]);
        assert_eq!(depth_metrics(&none, &g), Err(MetricsError::NoOverlap));
        assert_eq!(depth_metrics(&ramp(2, 2), &g), Err(MetricsError::SizeMismatch));
    }

    proptest! {
        #[test]
        fn depth_metrics_ignore_pixel_order(vals in prop::collection::vec((0.1f64..5.0, 0.1f64..5.0), 2..60), rot in 0usize..60) {
            let n = vals.len();
            let k = rot % n;
            let p: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let g: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let (mut p2, mut g2) = (p.clone(), g.clone());
            p2.rotate_left(k);
            g2.rotate_left(k);
            let a = depth_metrics(&DepthMap::from_vec(n, 1, p), &DepthMap::from_vec(n, 1, g)).unwrap();
            let b = depth_metrics(&DepthMap::from_vec(n, 1, p2), &DepthMap::from_vec(n, 1, g2)).unwrap();
            prop_assert!((a.abs_rel - b.abs_rel).abs() < 1e-12 && (a.rmse - b.rmse).abs() < 1e-12);
            prop_assert!((a.sc_inv - b.sc_inv).abs() < 1e-9 && a.delta1 == b.delta1);
            prop_assert!(a.delta1 >= 0.0 && a.delta1 <= 1.0 && a.sc_inv >= 0.0);
        }
    }

    fn square(size: f64) -> TriangleMesh {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(size, 0.0, 0.0),
            Vec3::new(size, size, 0.0),
            Vec3::new(0.0, size, 0.0),
        ];
        TriangleMesh {
            vertices: v,
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: Vec::new(),
        }
    }

    #[test]
    fn mesh_self_and_shifts() {
        let m = square(1.0);
        let cfg = MeshMetricsConfig::default();
        let s = mesh_metrics(&m, &m, &cfg).unwrap();
        assert!(s.fscore >= 0.99 && s.acc < 0.01);

        // shifted along the normal so every sample is exactly 0.04 away
        let up = m.translated(&Vec3::new(0.0, 0.0, 0.04));
        let s = mesh_metrics(&up, &m, &cfg).unwrap();
        assert!(s.prec > 0.99 && s.recall > 0.99);
        assert!((s.acc - 0.04).abs() < 0.002);

        let far = m.translated(&Vec3::new(0.0, 0.0, 0.10));
        let s = mesh_metrics(&far, &m, &cfg).unwrap();
        assert!(s.fscore < 0.05);

        assert_eq!(mesh_metrics(&TriangleMesh::default(), &m, &cfg), Err(MetricsError::EmptyMesh));
    }

    #[test]
    fn swap_symmetry() {
        let a = square(1.0);
        let b = square(0.8).translated(&Vec3::new(0.1, 0.3, 0.02));
        let cfg = MeshMetricsConfig::default();
        let ab = mesh_metrics(&a, &b, &cfg).unwrap();
        let ba = mesh_metrics(&b, &a, &cfg).unwrap();
        assert!((ab.acc - ba.comp).abs() < 0.02 && (ab.comp - ba.acc).abs() < 0.02);
        assert!((ab.prec - ba.recall).abs() < 0.02 && (ab.recall - ba.prec).abs() < 0.02);
    }

    #[test]
    fn fscore_is_harmonic_mean() {
        let g = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let p = vec![Vec3::zeros()];
        let m = point_metrics(&p, &g, 0.05);
        assert_eq!((m.prec, m.recall), (1.0, 0.5));
        assert!((m.fscore - 2.0 / 3.0).abs() < 1e-15);
        let m = point_metrics(&[Vec3::new(5.0, 0.0, 0.0)], &g, 0.05);
        assert_eq!(m.fscore, 0.0);
    }
}
