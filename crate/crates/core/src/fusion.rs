//! Keyframes, fragments, multi-view feature pooling, recurrent fragment
//! fusion and integration into a global grid.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_angle_deg, BilinearCell, CameraGeometry, Pose, Vec3};
use crate::raster::Image;
use crate::voxel::{GridGeometry, VoxelError, VoxelGrid};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("need at least {0} keyframes, got {1}")]
    TooFewKeyframes(usize, usize),
    #[error("views per fragment must be at least 2, got {0}")]
    FragmentSize(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

/// Thresholds that promote a frame to a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeThresholds {
    pub rotation_deg: f64,
    pub translation: f64,
}

impl Default for KeyframeThresholds {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            translation: 0.3,
        }
    }
}

/// Slack for threshold comparisons so that accumulated float error on exact
/// multiples (three 0.1 m steps) does not count as exceeding.
const THRESHOLD_SLACK: f64 = 1e-9;

/// Greedy scan: frame 0 is kept, then every frame whose rotation or camera
/// displacement relative to the last kept frame exceeds a threshold.
pub fn select_keyframes(trajectory: &[Pose], th: &KeyframeThresholds) -> Vec<usize> {
    let mut kept = Vec::new();
    let Some(first) = trajectory.first() else {
        return kept;
    };
    kept.push(0);
    let mut last = first;
    for (i, p) in trajectory.iter().enumerate().skip(1) {
        let rot = rotation_angle_deg(last, p);
        let dist = (p.center() - last.center()).norm();
        if rot > th.rotation_deg + THRESHOLD_SLACK || dist > th.translation + THRESHOLD_SLACK {
            kept.push(i);
            last = p;
        }
    }
    kept
}

/// How fragments are cut and where their grids sit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentConfig {
    pub views_per_fragment: usize,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub truncation: f64,
    /// Distance along each optical axis to the point the region is centered on.
    pub target_distance: f64,
}

impl Default for FragmentConfig {
    fn default() -> Self {
        Self {
            views_per_fragment: 9,
            dims: [96; 3],
            voxel_size: 0.04,
            truncation: 0.3,
            target_distance: 2.0,
        }
    }
}

/// A run of consecutive keyframes with its own grid region.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub index: usize,
    /// Trajectory indices of the member keyframes, in order.
    pub frames: Vec<usize>,
    pub region: GridGeometry,
}

/// Grid of `dims` centered near `center`, with voxel centers on the global
/// lattice `{k · voxel_size}`.
pub fn snapped_region(center: &Vec3, dims: [usize; 3], voxel_size: f64, truncation: f64) -> GridGeometry {
    let mut origin = [0.0; 3];
    for a in 0..3 {
        let lo = center[a] - (dims[a] - 1) as f64 * voxel_size / 2.0;
        origin[a] = (lo / voxel_size).round() * voxel_size;
    }
    GridGeometry {
        origin,
        voxel_size,
        dims,
        truncation,
    }
}

/// Splits keyframes into chunks of `views_per_fragment`; a trailing chunk is
/// kept when it has at least two frames.
pub fn make_fragments(
    cams: &[CameraGeometry],
    keyframes: &[usize],
    cfg: &FragmentConfig,
) -> Result<Vec<Fragment>, FusionError> {
    if cfg.views_per_fragment < 2 {
        return Err(FusionError::FragmentSize(cfg.views_per_fragment));
    }
    if keyframes.len() < 2 {
        return Err(FusionError::TooFewKeyframes(2, keyframes.len()));
    }
    let mut out = Vec::new();
    for chunk in keyframes.chunks(cfg.views_per_fragment) {
        if chunk.len() < 2 {
            continue;
        }
        let mut target = Vec3::zeros();
        for &f in chunk {
            let pose = &cams[f].pose;
            // optical axis in world = third row of the rotation
            let axis = pose.rotation.row(2).transpose();
            target += pose.center() + axis * cfg.target_distance;
        }
        target /= chunk.len() as f64;
        out.push(Fragment {
            index: out.len(),
            frames: chunk.to_vec(),
            region: snapped_region(&target, cfg.dims, cfg.voxel_size, cfg.truncation),
        });
    }
    Ok(out)
}

/// Smallest lattice-aligned geometry containing all `regions`.
pub fn union_region(regions: &[GridGeometry]) -> Result<GridGeometry, FusionError> {
    let first = regions.first().ok_or(FusionError::TooFewKeyframes(1, 0))?;
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for r in regions {
        let off = first.lattice_offset(r)?;
        for a in 0..3 {
            lo[a] = lo[a].min(off[a]);
            hi[a] = hi[a].max(off[a] + r.dims[a] as i64 - 1);
        }
    }
    let mut origin = first.origin;
    let mut dims = [0; 3];
    for a in 0..3 {
        origin[a] += lo[a] as f64 * first.voxel_size;
        dims[a] = (hi[a] - lo[a] + 1) as usize;
    }
    Ok(GridGeometry { origin, dims, ..*first })
}

/// Per-voxel feature vectors with observation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub dims: [usize; 3],
    pub channels: usize,
    /// `len × channels`, voxel-major.
    pub values: Vec<f64>,
    pub count: Vec<u32>,
}

impl FeatureVolume {
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            channels,
            values: vec![0.0; n * channels],
            count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    pub fn feature(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }
}

/// Mean of the bilinearly sampled view features over the views in whose
/// image each voxel center projects.
pub fn fuse_views(
    features: &[Image],
    region: &GridGeometry,
    cams: &[CameraGeometry],
) -> Result<FeatureVolume, FusionError> {
    if features.len() != cams.len() {
        return Err(FusionError::Shape(format!("{} feature maps for {} views", features.len(), cams.len())));
    }
    let channels = features.first().map_or(0, |f| f.channels());
    if features.iter().any(|f| f.channels() != channels) {
        return Err(FusionError::Shape("feature maps differ in channel count".into()));
    }
    let per_voxel: Vec<(Vec<f64>, u32)> = (0..region.len())
        .into_par_iter()
        .map(|idx| {
            let x = region.center_of(idx);
            let mut acc = vec![0.0; channels];
            let mut tmp = vec![0.0; channels];
            let mut n = 0u32;
            for (f, cam) in features.iter().zip(cams) {
                let Some((_, p)) = cam.project_world(&x) else { continue };
                let Some(cell) = BilinearCell::locate(f.width(), f.height(), p.u, p.v) else {
                    continue;
                };
                cell.sample(f, &mut tmp);
                acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t);
                n += 1;
            }
            if n > 0 {
                acc.iter_mut().for_each(|a| *a /= n as f64);
            }
            (acc, n)
        })
        .collect();
    let mut vol = FeatureVolume::zeros(region.dims, channels);
    for (idx, (f, n)) in per_voxel.into_iter().enumerate() {
        vol.values[idx * channels..(idx + 1) * channels].copy_from_slice(&f);
        vol.count[idx] = n;
    }
    Ok(vol)
}

/// Per-voxel GRU parameters acting on `[hidden, input]` (length `2C`).
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: DMatrix<f64>,
    pub b_z: DVector<f64>,
    pub w_r: DMatrix<f64>,
    pub b_r: DVector<f64>,
    pub w_h: DMatrix<f64>,
    pub b_h: DVector<f64>,
}

impl GruWeights {
    pub fn zeros(channels: usize) -> Self {
        let m = DMatrix::zeros(channels, 2 * channels);
        let b = DVector::zeros(channels);
        Self {
            w_z: m.clone(),
            b_z: b.clone(),
            w_r: m.clone(),
            b_r: b.clone(),
            w_h: m,
            b_h: b,
        }
    }

    /// Uniform entries in `[-scale, scale]`.
    pub fn random(channels: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..=scale));
        let w_z = draw(channels, 2 * channels);
        let b_z = draw(channels, 1).column(0).into_owned();
        let w_r = draw(channels, 2 * channels);
        let b_r = draw(channels, 1).column(0).into_owned();
        let w_h = draw(channels, 2 * channels);
        let b_h = draw(channels, 1).column(0).into_owned();
        Self {
            w_z,
            b_z,
            w_r,
            b_r,
            w_h,
            b_h,
        }
    }

    pub fn channels(&self) -> usize {
        self.b_z.len()
    }

    fn check(&self) -> Result<(), FusionError> {
        let c = self.channels();
        let ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|m| m.shape() == (c, 2 * c))
            && self.b_r.len() == c
            && self.b_h.len() == c;
        if ok {
            Ok(())
        } else {
            Err(FusionError::Shape("GRU weight shapes".into()))
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gates and new state for one voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub z: DVector<f64>,
    pub r: DVector<f64>,
    pub h: DVector<f64>,
}

pub fn gru_cell(h: &DVector<f64>, g: &DVector<f64>, w: &GruWeights) -> GruStep {
    let c = h.len();
    let mut hg = DVector::zeros(2 * c);
    hg.rows_mut(0, c).copy_from(h);
    hg.rows_mut(c, c).copy_from(g);
    let z = (&w.w_z * &hg + &w.b_z).map(logistic);
    let r = (&w.w_r * &hg + &w.b_r).map(logistic);
    let mut rg = hg;
    rg.rows_mut(0, c).copy_from(&r.component_mul(h));
    let cand = (&w.w_h * &rg + &w.b_h).map(f64::tanh);
    let new = h.component_mul(&z.map(|v| 1.0 - v)) + z.component_mul(&cand);
    GruStep { z, r, h: new }
}

/// Recurrent update of the hidden volume with the current fragment's
/// features. Voxels unobserved in both stay zero.
pub fn gru_fuse(prev: &FeatureVolume, current: &FeatureVolume, w: &GruWeights) -> Result<FeatureVolume, FusionError> {
    w.check()?;
    if prev.dims != current.dims || prev.channels != current.channels || prev.channels != w.channels() {
        return Err(FusionError::Shape(format!(
            "hidden {:?}x{}, input {:?}x{}, weights {}",
            prev.dims,
            prev.channels,
            current.dims,
            current.channels,
            w.channels()
        )));
    }
    let c = prev.channels;
    let rows: Vec<Option<DVector<f64>>> = (0..prev.len())
        .into_par_iter()
        .map(|idx| {
            if prev.count[idx] == 0 && current.count[idx] == 0 {
                return None;
            }
            let h = DVector::from_column_slice(prev.feature(idx));
            let g = DVector::from_column_slice(current.feature(idx));
            Some(gru_cell(&h, &g, w).h)
        })
        .collect();
    let mut out = FeatureVolume::zeros(prev.dims, c);
    for (idx, h) in rows.into_iter().enumerate() {
        if let Some(h) = h {
            out.values[idx * c..(idx + 1) * c].copy_from_slice(h.as_slice());
            out.count[idx] = prev.count[idx] + current.count[idx];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrateMode {
    /// Later fragments overwrite overlapping voxels.
    Replace,
    /// Running mean weighted by how many fragments observed each voxel.
    Average,
}

/// A global grid plus per-voxel fragment counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGrid {
    pub grid: VoxelGrid,
    pub weight: Vec<u32>,
}

impl GlobalGrid {
    pub fn new(geometry: GridGeometry) -> Self {
        let grid = VoxelGrid::new(geometry);
        let n = grid.len();
        Self { grid, weight: vec![0; n] }
    }
}

/// Writes the valid voxels of `fragment` into `global`. Fragment voxels
/// outside the global region are dropped.
pub fn integrate_fragment(global: &mut GlobalGrid, fragment: &VoxelGrid, mode: IntegrateMode) -> Result<(), FusionError> {
    let g = global.grid.geometry;
    let off = g.lattice_offset(&fragment.geometry)?;
    for idx in 0..fragment.len() {
        if !fragment.valid[idx] {
            continue;
        }
        let (i, j, k) = fragment.geometry.unravel(idx);
        let p = [i as i64 + off[0], j as i64 + off[1], k as i64 + off[2]];
        if (0..3).any(|a| p[a] < 0 || p[a] >= g.dims[a] as i64) {
            continue;
        }
        let t = g.linear(p[0] as usize, p[1] as usize, p[2] as usize);
        let v = fragment.sdf[idx];
        match mode {
            IntegrateMode::Replace => global.grid.sdf[t] = v,
            IntegrateMode::Average => {
                let w = global.weight[t] as f64;
                global.grid.sdf[t] = if global.weight[t] == 0 {
                    v
                } else {
                    (global.grid.sdf[t] * w + v) / (w + 1.0)
                };
            }
        }
        global.grid.valid[t] = true;
        global.weight[t] += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, Intrinsics, Mat3};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn at(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(Mat3::identity(), -Vec3::new(x, y, z)).unwrap()
    }

    #[test]
    fn keyframe_examples() {
        let th = KeyframeThresholds::default();
        assert_eq!(select_keyframes(&vec![Pose::identity(); 6], &th), vec![0]);
        assert!(select_keyframes(&[], &th).is_empty());

        let line: Vec<Pose> = (0..13).map(|i| at(0.1 * i as f64, 0.0, 0.0)).collect();
        assert_eq!(select_keyframes(&line, &th), vec![0, 4, 8, 12]);

        let spin: Vec<Pose> = (0..7)
            .map(|i| Pose::new(axis_angle(&Vec3::y(), (10.0 * i as f64).to_radians()), Vec3::zeros()).unwrap())
            .collect();
        assert_eq!(select_keyframes(&spin, &th), vec![0, 2, 4, 6]);
    }

    proptest! {
        #[test]
        fn keyframes_exceed_a_threshold(steps in prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2, -12.0f64..12.0), 1..40)) {
            let mut pos = Vec3::zeros();
            let mut yaw = 0.0;
            let traj: Vec<Pose> = steps.iter().map(|&(dx, dy, da)| {
                pos += Vec3::new(dx, dy, 0.0);
                yaw += da;
                let r = axis_angle(&Vec3::z(), f64::to_radians(yaw));
                Pose::new(r, -(r * pos)).unwrap()
            }).collect();
            let th = KeyframeThresholds::default();
            let k = select_keyframes(&traj, &th);
            prop_assert_eq!(k[0], 0);
            for w in k.windows(2) {
                prop_assert!(w[0] < w[1]);
                let (a, b) = (&traj[w[0]], &traj[w[1]]);
                prop_assert!(rotation_angle_deg(a, b) > 15.0 || (a.center() - b.center()).norm() > 0.3);
            }
        }
    }

    fn cams(n: usize) -> Vec<CameraGeometry> {
        let intr = Intrinsics::centered(50.0, 32, 24);
        (0..n)
            .map(|i| CameraGeometry::new(intr, at(0.13 * i as f64, 0.0, 0.0)))
            .collect()
    }

    #[test]
    fn fragment_chunking() {
        let c = cams(30);
        let cfg = FragmentConfig {
            dims: [8; 3],
            ..Default::default()
        };
        let k: Vec<usize> = (0..27).collect();
        assert_eq!(make_fragments(&c, &k, &cfg).unwrap().len(), 3);
        let k: Vec<usize> = (0..10).collect();
        let f = make_fragments(&c, &k, &cfg).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].frames.len(), 9);
        let k: Vec<usize> = (0..11).collect();
        assert_eq!(make_fragments(&c, &k, &cfg).unwrap()[1].frames, vec![9, 10]);
        assert_eq!(make_fragments(&c, &[0], &cfg), Err(FusionError::TooFewKeyframes(2, 1)));
        let bad = FragmentConfig {
            views_per_fragment: 1,
            ..cfg
        };
        assert_eq!(make_fragments(&c, &k, &bad), Err(FusionError::FragmentSize(1)));
    }

    #[test]
    fn fragments_share_the_lattice() {
        let c = cams(30);
        let cfg = FragmentConfig {
            views_per_fragment: 3,
            dims: [20; 3],
            ..Default::default()
        };
        let k: Vec<usize> = (0..6).collect();
        let f = make_fragments(&c, &k, &cfg).unwrap();
        let (a, b) = (&f[0].region, &f[1].region);
        let off = a.lattice_offset(b).unwrap();
        assert!(off[0] > 0 && off[0] < 20);
        // voxel (off) in a is voxel 0 in b
        let pa = a.center_of(a.linear(off[0] as usize, 0, 0));
        let pb = b.center_of(0);
        assert!((pa - pb).norm() < 1e-12);
        // centered on the mean target 2 m ahead
        let mid = (a.center_of(0) + a.max_center()) / 2.0;
        assert!((mid - Vec3::new(0.13, 0.0, 2.0)).amax() <= 0.02 + 1e-12, "{mid:?}");
    }

    #[test]
    fn union_covers_regions() {
        let a = snapped_region(&Vec3::zeros(), [4, 4, 4], 0.1, 0.3);
        let b = snapped_region(&Vec3::new(0.5, 0.0, -0.2), [4, 4, 4], 0.1, 0.3);
        let u = union_region(&[a, b]).unwrap();
        assert_eq!(u.dims, [9, 4, 6]);
        assert!(u.lattice_offset(&a).is_ok());
    }

    fn one_cam() -> CameraGeometry {
        CameraGeometry::new(Intrinsics::centered(30.0, 40, 30), Pose::identity())
    }

    fn region() -> GridGeometry {
        GridGeometry::centered(Vec3::new(0.0, 0.0, 2.0), 0.1, [5, 4, 3], 0.3)
    }

    fn feature_map(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_vec(40, 30, 2, (0..2400).map(|_| rng.random()).collect())
    }

    #[test]
    fn fuse_single_view() {
        let f = feature_map(1);
        let cam = one_cam();
        let v = fuse_views(&[f.clone()], &region(), &[cam]).unwrap();
        for idx in 0..v.len() {
            assert_eq!(v.count[idx], 1);
            let (_, p) = cam.project_world(&region().center_of(idx)).unwrap();
            let want = crate::geometry::bilinear_sample(&f, &p).unwrap();
            assert_eq!(v.feature(idx), &want[..]);
        }
        let twice = fuse_views(&[f.clone(), f.clone()], &region(), &[cam, cam]).unwrap();
        for (a, b) in twice.values.iter().zip(&v.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_respects_visibility() {
        let f = feature_map(2);
        let away = CameraGeometry::new(
            one_cam().intrinsics,
            Pose::new(axis_angle(&Vec3::y(), std::f64::consts::PI), Vec3::zeros()).unwrap(),
        );
        let both = fuse_views(&[f.clone(), feature_map(3)], &region(), &[one_cam(), away]).unwrap();
        let single = fuse_views(&[f], &region(), &[one_cam()]).unwrap();
        assert_eq!(both, single);

        let zero = fuse_views(&[feature_map(4)], &region(), &[away]).unwrap();
        assert!(zero.count.iter().all(|&c| c == 0) && zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_is_permutation_invariant() {
        let moved = CameraGeometry::new(one_cam().intrinsics, at(0.2, 0.0, 0.0));
        let a = fuse_views(&[feature_map(5), feature_map(6)], &region(), &[one_cam(), moved]).unwrap();
        let b = fuse_views(&[feature_map(6), feature_map(5)], &region(), &[moved, one_cam()]).unwrap();
        assert_eq!(a.count, b.count);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn random_volume(seed: u64, c: usize) -> FeatureVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = FeatureVolume::zeros([3, 3, 2], c);
        v.values.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        v.count.iter_mut().for_each(|n| *n = 1);
        v
    }

    #[test]
    fn closed_update_gate_keeps_hidden() {
        let mut w = GruWeights::random(4, 0.5, 3);
        w.b_z.fill(-60.0);
        let h = random_volume(1, 4);
        let out = gru_fuse(&h, &random_volume(2, 4), &w).unwrap();
        for (a, b) in out.values.iter().zip(&h.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn open_gates_give_candidate() {
        let mut w = GruWeights::random(3, 0.5, 4);
        w.b_z.fill(60.0);
        w.b_r.fill(60.0);
        let (h, g) = (random_volume(5, 3), random_volume(6, 3));
        let out = gru_fuse(&h, &g, &w).unwrap();
        for idx in 0..h.len() {
            let hg: Vec<f64> = h.feature(idx).iter().chain(g.feature(idx)).copied().collect();
            let want = (&w.w_h * DVector::from_vec(hg) + &w.b_h).map(f64::tanh);
            for c in 0..3 {
                assert!((out.feature(idx)[c] - want[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gru_ranges_and_unobserved() {
        let w = GruWeights::random(4, 0.3, 9);
        for s in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let h = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let g = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            let st = gru_cell(&h, &g, &w);
            assert!(st.z.iter().chain(st.r.iter()).all(|&v| v > 0.0 && v < 1.0));
            assert!(st.h.iter().all(|&v| v > -1.0 && v < 1.0));
        }
        let mut h = random_volume(1, 4);
        let mut g = random_volume(2, 4);
        h.count[3] = 0;
        h.values[12..16].fill(0.0);
        g.count[3] = 0;
        let out = gru_fuse(&h, &g, &w).unwrap();
        assert_eq!(out.feature(3), &[0.0; 4]);
        assert_eq!(out.count[3], 0);
        assert!(gru_fuse(&h, &random_volume(2, 3), &w).is_err());
    }

    fn frag(origin_x: f64, value: f64) -> VoxelGrid {
        let geom = GridGeometry::new(Vec3::new(origin_x, 0.0, 0.0), 0.1, [3, 1, 1], 0.3).unwrap();
        VoxelGrid::constant(geom, value)
    }

    #[test]
    fn integrate_examples() {
        let geom = GridGeometry::new(Vec3::zeros(), 0.1, [6, 1, 1], 0.3).unwrap();
        for mode in [IntegrateMode::Replace, IntegrateMode::Average] {
            let mut g = GlobalGrid::new(geom);
            integrate_fragment(&mut g, &frag(0.0, 0.1), mode).unwrap();
            integrate_fragment(&mut g, &frag(0.3, 0.2), mode).unwrap();
            assert!(g.grid.valid.iter().all(|&v| v));
            assert_eq!(&g.grid.sdf[..], &[0.1, 0.1, 0.1, 0.2, 0.2, 0.2]);

            let mut g = GlobalGrid::new(geom);
            integrate_fragment(&mut g, &frag(0.0, 0.1), mode).unwrap();
            integrate_fragment(&mut g, &frag(0.0, 0.1), mode).unwrap();
            assert_eq!(&g.grid.sdf[..3], &[0.1; 3]);
        }
        let mut g = GlobalGrid::new(geom);
        integrate_fragment(&mut g, &frag(0.1, 0.1), IntegrateMode::Replace).unwrap();
        integrate_fragment(&mut g, &frag(0.2, 0.3), IntegrateMode::Replace).unwrap();
        assert_eq!(g.grid.sdf[2], 0.3);
        let mut g = GlobalGrid::new(geom);
        integrate_fragment(&mut g, &frag(0.1, 0.1), IntegrateMode::Average).unwrap();
        integrate_fragment(&mut g, &frag(0.2, 0.3), IntegrateMode::Average).unwrap();
        assert!((g.grid.sdf[2] - 0.2).abs() < 1e-15);
        assert_eq!(g.weight[2], 2);

        let off = GridGeometry::new(Vec3::new(0.05, 0.0, 0.0), 0.1, [3, 1, 1], 0.3).unwrap();
        assert!(integrate_fragment(&mut g, &VoxelGrid::constant(off, 0.0), IntegrateMode::Replace).is_err());
    }

    #[test]
    fn average_is_order_invariant() {
        let geom = GridGeometry::new(Vec3::zeros(), 0.1, [6, 1, 1], 0.3).unwrap();
        let (a, b) = (frag(0.1, 0.137), frag(0.2, -0.071));
        let mut x = GlobalGrid::new(geom);
        integrate_fragment(&mut x, &a, IntegrateMode::Average).unwrap();
        integrate_fragment(&mut x, &b, IntegrateMode::Average).unwrap();
        let mut y = GlobalGrid::new(geom);
        integrate_fragment(&mut y, &b, IntegrateMode::Average).unwrap();
        integrate_fragment(&mut y, &a, IntegrateMode::Average).unwrap();
        for (p, q) in x.grid.sdf.iter().zip(&y.grid.sdf) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
