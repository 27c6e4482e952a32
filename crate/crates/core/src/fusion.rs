//! Region-centric global propagation: devoxelize every frame of a temporal
//! window, register it into the target LiDAR frame, accumulate sensor-weighted
//! class votes per target voxel and take the per-voxel argmax.
//!
//! Sensor weights are evaluated in the coordinates of the frame that produced
//! the prediction (its own camera frustum and range), before registration.
//! Votes are summed in f64 in ascending frame order, then source voxel order,
//! and ties go to the lowest class id, so the output does not depend on the
//! number of worker threads.

use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{relative_lidar_pose, FrameCalib, Pose};
use crate::grid::{ClassId, GridSpec, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemanticPoint {
    pub pos: [f64; 3],
    pub class: ClassId,
    pub weight: f64,
}

/// Occupied-voxel points of one frame. Only occupied classes vote.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SemanticPointCloud {
    pub points: Vec<SemanticPoint>,
}

impl SemanticPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One point per occupied voxel, at the voxel center, weight 1.
pub fn devoxelize(grid: &VoxelGrid) -> Result<SemanticPointCloud> {
    grid.validate_prediction()?;
    let spec = grid.spec();
    let points = grid
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_occupied())
        .map(|(l, &class)| SemanticPoint {
            pos: spec.center_unchecked(spec.index_unchecked(l)),
            class,
            weight: 1.0,
        })
        .collect();
    Ok(SemanticPointCloud { points })
}

pub fn transform_cloud(cloud: &SemanticPointCloud, rel: &Pose) -> SemanticPointCloud {
    if *rel == Pose::IDENTITY {
        return cloud.clone();
    }
    SemanticPointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| SemanticPoint {
                pos: rel.transform_point(p.pos),
                ..*p
            })
            .collect(),
    }
}

/// Camera visibility weighting: frustum membership and a near-range box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraWeights {
    pub fov_w: f64,
    pub fov_h: f64,
    /// Near-range box in the sensor's LiDAR frame, meters.
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub w_high: f64,
    pub w_med: f64,
    pub w_low: f64,
    pub lidar_to_cam: Pose,
}

impl CameraWeights {
    pub fn from_calib(calib: &FrameCalib) -> Self {
        Self {
            fov_w: calib.intrinsics.fov_w(),
            fov_h: calib.intrinsics.fov_h(),
            lidar_to_cam: calib.lidar_to_cam,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !(self.w_high >= self.w_med && self.w_med >= self.w_low && self.w_low > 0.0) {
            return Err(Error::Config(format!(
                "camera weights must satisfy w_high >= w_med >= w_low > 0 (got {}, {}, {})",
                self.w_high, self.w_med, self.w_low
            )));
        }
        if !fov_ok(self.fov_w) || !fov_ok(self.fov_h) {
            return Err(Error::Config(format!(
                "camera fov must lie in (0, pi) (got {}, {})",
                self.fov_w, self.fov_h
            )));
        }
        if (0..3).any(|a| !(self.bbox_min[a] <= self.bbox_max[a])) {
            return Err(Error::Config("camera bbox min exceeds max".into()));
        }
        Ok(())
    }
}

impl Default for CameraWeights {
    /// 25.6 x 25.6 x 6.4 m box ahead of the sensor; fov from the KITTI camera.
    fn default() -> Self {
        let calib = FrameCalib::default();
        Self {
            fov_w: calib.intrinsics.fov_w(),
            fov_h: calib.intrinsics.fov_h(),
            bbox_min: [0.0, -12.8, -2.0],
            bbox_max: [25.6, 12.8, 4.4],
            w_high: 1.0,
            w_med: 0.1,
            w_low: 0.01,
            lidar_to_cam: calib.lidar_to_cam,
        }
    }
}

/// Linear range attenuation for LiDAR-derived predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarWeights {
    pub w_max: f64,
    pub w_min: f64,
    pub max_range: f64,
}

impl LidarWeights {
    fn validate(&self) -> Result<()> {
        if !(self.w_max >= self.w_min && self.w_min > 0.0) || !(self.max_range > 0.0) {
            return Err(Error::Config(format!(
                "lidar weights need w_max >= w_min > 0 and max_range > 0 (got {}, {}, {})",
                self.w_max, self.w_min, self.max_range
            )));
        }
        Ok(())
    }
}

impl Default for LidarWeights {
    fn default() -> Self {
        Self {
            w_max: 10.0,
            w_min: 0.1,
            max_range: 51.2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum WeightProfile {
    #[default]
    Uniform,
    Camera(CameraWeights),
    Lidar(LidarWeights),
}

pub fn in_camera_frustum(p_cam: [f64; 3], fov_w: f64, fov_h: f64) -> bool {
    let [x, y, z] = p_cam;
    x.atan2(z).abs() <= fov_w / 2.0 && y.atan2(z).abs() <= fov_h / 2.0 && z > 0.0
}

/// Three-level camera weight: `w_high` inside frustum and box, `w_med` inside
/// the frustum only, `w_low` elsewhere. `p_cam` is the point in camera
/// coordinates and `p_lidar` the same point in the sensor's LiDAR frame.
pub fn camera_weight(p_cam: [f64; 3], p_lidar: [f64; 3], cam: &CameraWeights) -> f64 {
    if !in_camera_frustum(p_cam, cam.fov_w, cam.fov_h) {
        return cam.w_low;
    }
    let inside = (0..3).all(|a| p_lidar[a] >= cam.bbox_min[a] && p_lidar[a] <= cam.bbox_max[a]);
    if inside {
        cam.w_high
    } else {
        cam.w_med
    }
}

/// `w_max - (w_max - w_min) r / R`, clamped to `w_min` beyond `R`.
pub fn lidar_weight(r: f64, lidar: &LidarWeights) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("radial distance must be >= 0, got {r}")));
    }
    let s = (r / lidar.max_range).min(1.0);
    // written as an interpolation so both endpoints come out exact
    Ok(lidar.w_min * s + lidar.w_max * (1.0 - s))
}

impl WeightProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightProfile::Uniform => Ok(()),
            WeightProfile::Camera(c) => c.validate(),
            WeightProfile::Lidar(l) => l.validate(),
        }
    }

    /// Weight of a vote cast at `p` (sensor LiDAR frame of the voting frame).
    #[inline]
    pub fn sensor_weight(&self, p: [f64; 3]) -> f64 {
        match self {
            WeightProfile::Uniform => 1.0,
            WeightProfile::Camera(c) => camera_weight(c.lidar_to_cam.transform_point(p), p, c),
            WeightProfile::Lidar(l) => {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                lidar_weight(r, l).unwrap_or(l.w_min)
            }
        }
    }

    /// Multiplies each point's weight by its sensor weight. The cloud must be
    /// in the LiDAR frame of the sensor that produced it.
    pub fn apply(&self, cloud: &mut SemanticPointCloud) {
        if matches!(self, WeightProfile::Uniform) {
            return;
        }
        for p in &mut cloud.points {
            p.weight *= self.sensor_weight(p.pos);
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightProfile::Uniform => "uniform",
            WeightProfile::Camera(_) => "camera",
            WeightProfile::Lidar(_) => "lidar",
        }
    }

    /// Parses a `key = value` profile file. Unset keys keep their defaults;
    /// camera fov defaults come from `calib` when given.
    pub fn from_config_str(text: &str, calib: Option<&FrameCalib>) -> Result<Self> {
        let file: ProfileFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("weight profile: {e}")))?;
        let profile = match file.mode.as_str() {
            "uniform" => WeightProfile::Uniform,
            "camera" => {
                let base = calib.map(CameraWeights::from_calib).unwrap_or_default();
                WeightProfile::Camera(CameraWeights {
                    fov_w: file.fov_w.unwrap_or(base.fov_w),
                    fov_h: file.fov_h.unwrap_or(base.fov_h),
                    bbox_min: file.bbox_min.unwrap_or(base.bbox_min),
                    bbox_max: file.bbox_max.unwrap_or(base.bbox_max),
                    w_high: file.w_high.unwrap_or(base.w_high),
                    w_med: file.w_med.unwrap_or(base.w_med),
                    w_low: file.w_low.unwrap_or(base.w_low),
                    lidar_to_cam: base.lidar_to_cam,
                })
            }
            "lidar" => {
                let base = LidarWeights::default();
                WeightProfile::Lidar(LidarWeights {
                    w_max: file.w_max.unwrap_or(base.w_max),
                    w_min: file.w_min.unwrap_or(base.w_min),
                    max_range: file.max_range.unwrap_or(base.max_range),
                })
            }
            other => return Err(Error::Config(format!("unknown weight profile mode '{other}'"))),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path, calib: Option<&FrameCalib>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text, calib).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })
    }

    /// Renders the profile in the config-file format.
    pub fn to_config_string(&self) -> String {
        match self {
            WeightProfile::Uniform => "mode = \"uniform\"\n".to_string(),
            WeightProfile::Camera(c) => format!(
                "mode = \"camera\"\nfov_w = {}\nfov_h = {}\nbbox_min = {:?}\nbbox_max = {:?}\n\
                 w_high = {}\nw_med = {}\nw_low = {}\n",
                c.fov_w, c.fov_h, c.bbox_min, c.bbox_max, c.w_high, c.w_med, c.w_low
            ),
            WeightProfile::Lidar(l) => format!(
                "mode = \"lidar\"\nw_max = {}\nw_min = {}\nmax_range = {}\n",
                l.w_max, l.w_min, l.max_range
            ),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    mode: String,
    fov_w: Option<f64>,
    fov_h: Option<f64>,
    bbox_min: Option<[f64; 3]>,
    bbox_max: Option<[f64; 3]>,
    w_high: Option<f64>,
    w_med: Option<f64>,
    w_low: Option<f64>,
    w_max: Option<f64>,
    w_min: Option<f64>,
    max_range: Option<f64>,
}

/// Dense per-voxel, per-class vote sums over a target volume.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteAccumulator {
    spec: GridSpec,
    num_classes: usize,
    sums: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VoxelizeStats {
    pub accepted: usize,
    pub dropped: usize,
}

impl VoteAccumulator {
    pub fn new(spec: GridSpec, num_classes: usize) -> Self {
        Self {
            spec,
            num_classes,
            sums: vec![0.0; spec.num_voxels() * num_classes],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Sums laid out as `[voxel][class - 1]`.
    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn voxel_sums(&self, linear: usize) -> &[f64] {
        &self.sums[linear * self.num_classes..(linear + 1) * self.num_classes]
    }

    #[inline]
    pub fn add(&mut self, linear: usize, class: ClassId, weight: f64) {
        debug_assert!(class.is_occupied() && class.index() <= self.num_classes);
        self.sums[linear * self.num_classes + class.index() - 1] += weight;
    }

    /// Adds every point's weight to the voxel containing it. Points outside
    /// the volume are dropped.
    pub fn voxelize_into(&mut self, cloud: &SemanticPointCloud) -> Result<VoxelizeStats> {
        let mut stats = VoxelizeStats::default();
        for p in &cloud.points {
            if p.pos.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite point coordinate {:?}", p.pos)));
            }
            if !p.class.is_occupied() || p.class.index() > self.num_classes {
                return Err(Error::invalid(format!("point class {} cannot vote", p.class)));
            }
            match self.spec.point_to_index(p.pos) {
                Some(i) => {
                    self.add(self.spec.linear_unchecked(i), p.class, p.weight);
                    stats.accepted += 1;
                }
                None => stats.dropped += 1,
            }
        }
        Ok(stats)
    }

    pub fn vote(&self) -> Result<VoxelGrid> {
        vote(self)
    }
}

/// Per voxel argmax over occupied classes; all-zero voxels are free and ties
/// resolve to the lowest class id.
pub fn vote(acc: &VoteAccumulator) -> Result<VoxelGrid> {
    let labels = acc
        .sums
        .chunks_exact(acc.num_classes)
        .map(argmax_class)
        .collect::<Result<Vec<_>>>()?;
    Ok(VoxelGrid::from_labels_unchecked(acc.spec, labels, 0))
}

#[inline]
pub(crate) fn argmax_class(sums: &[f64]) -> Result<ClassId> {
    let mut best = ClassId::FREE;
    let mut best_sum = 0.0;
    for (k, &s) in sums.iter().enumerate() {
        if s.is_nan() {
            return Err(Error::Internal("NaN vote sum".into()));
        }
        if s > best_sum {
            best_sum = s;
            best = ClassId(k as u8 + 1);
        }
    }
    Ok(best)
}

/// A frame devoxelized and sensor-weighted in its own LiDAR frame, ready to
/// be registered into any target.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub frame_id: u32,
    pub cloud: SemanticPointCloud,
}

impl PreparedFrame {
    pub fn new(grid: &VoxelGrid, profile: &WeightProfile) -> Result<Self> {
        let mut cloud = devoxelize(grid)?;
        profile.apply(&mut cloud);
        Ok(Self {
            frame_id: grid.frame_id,
            cloud,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub frames: usize,
    pub points: usize,
    pub dropped: usize,
}

fn pose_of(poses: &[Pose], frame_id: u32) -> Result<&Pose> {
    poses
        .get(frame_id as usize)
        .ok_or(Error::MissingPose { frame_id })
}

/// Window `[t - n, t + n]` truncated to the sequence.
pub fn window_range(len: usize, target_index: usize, radius: usize) -> std::ops::RangeInclusive<usize> {
    target_index.saturating_sub(radius)..=(target_index + radius).min(len.saturating_sub(1))
}

/// Fuses frames `[target - radius, target + radius]` into the target frame.
///
/// `poses` are LiDAR-to-world poses indexed by each grid's `frame_id`.
pub fn fuse_window(
    frames: &[VoxelGrid],
    poses: &[Pose],
    target_index: usize,
    radius: usize,
    profile: &WeightProfile,
    num_classes: usize,
) -> Result<(VoxelGrid, FusionStats)> {
    if target_index >= frames.len() {
        return Err(Error::invalid(format!(
            "target index {target_index} out of range for {} frames",
            frames.len()
        )));
    }
    profile.validate()?;
    let window = window_range(frames.len(), target_index, radius);
    let offset = *window.start();
    let prepared = frames[window]
        .par_iter()
        .map(|g| PreparedFrame::new(g, profile))
        .collect::<Result<Vec<_>>>()?;
    let target = &frames[target_index];
    fuse_prepared(&prepared, poses, target_index - offset, target.spec(), num_classes)
        .map(|(mut g, s)| {
            g.frame_id = target.frame_id;
            (g, s)
        })
}

/// Fuses all `prepared` frames into the frame at `target` (an index into
/// `prepared`) using the given target volume.
pub fn fuse_prepared(
    prepared: &[PreparedFrame],
    poses: &[Pose],
    target: usize,
    target_spec: &GridSpec,
    num_classes: usize,
) -> Result<(VoxelGrid, FusionStats)> {
    let target_frame = prepared
        .get(target)
        .ok_or_else(|| Error::invalid(format!("target index {target} out of range")))?;
    let target_pose = pose_of(poses, target_frame.frame_id)?;
    let rels = prepared
        .iter()
        .map(|f| pose_of(poses, f.frame_id).map(|p| relative_lidar_pose(p, target_pose)))
        .collect::<Result<Vec<_>>>()?;

    // register every frame; order within a frame is the source voxel order
    let registered: Vec<Vec<(u32, ClassId, f64)>> = prepared
        .par_iter()
        .zip(rels.par_iter())
        .map(|(f, rel)| {
            f.cloud
                .points
                .iter()
                .filter_map(|p| {
                    let q = rel.transform_point(p.pos);
                    target_spec
                        .point_to_index(q)
                        .map(|i| (target_spec.linear_unchecked(i) as u32, p.class, p.weight))
                })
                .collect()
        })
        .collect();

    let points: usize = prepared.iter().map(|f| f.cloud.len()).sum();
    let accepted: usize = registered.iter().map(Vec::len).sum();

    // partition by target x-slab; each slab keeps ascending frame order
    let slab = target_spec.dims[1] * target_spec.dims[2];
    let mut buckets: Vec<Vec<(u32, ClassId, f64)>> = vec![Vec::new(); target_spec.dims[0]];
    for frame in &registered {
        for &e in frame {
            buckets[e.0 as usize / slab].push(e);
        }
    }
    drop(registered);

    let slabs = buckets
        .into_par_iter()
        .enumerate()
        .map(|(x, entries)| {
            let sub = target_spec.sub_spec([x, 0, 0], [1, target_spec.dims[1], target_spec.dims[2]]);
            if entries.is_empty() {
                return Ok(vec![ClassId::FREE; slab]);
            }
            let mut acc = VoteAccumulator::new(sub, num_classes);
            let base = x * slab;
            for (l, c, w) in entries {
                acc.add(l as usize - base, c, w);
            }
            Ok(vote(&acc)?.into_labels())
        })
        .collect::<Result<Vec<_>>>()?;

    let labels = slabs.concat();
    let grid = VoxelGrid::from_labels_unchecked(*target_spec, labels, target_frame.frame_id);
    Ok((
        grid,
        FusionStats {
            frames: prepared.len(),
            points,
            dropped: points - accepted,
        },
    ))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use proptest::prelude::*;

    use super::*;

    fn small_spec() -> GridSpec {
        GridSpec::new([4, 4, 4], [0.0; 3], [0.2; 3]).unwrap()
    }

    #[test]
    fn devoxelize_cases() {
        let spec = small_spec();
        assert!(devoxelize(&VoxelGrid::empty(spec, 0)).unwrap().is_empty());

        let mut g = VoxelGrid::empty(spec, 0);
        g.set([1, 0, 1], ClassId(3)).unwrap();
        let cloud = devoxelize(&g).unwrap();
        assert_eq!(cloud.len(), 1);
        let p = cloud.points[0];
        assert_eq!(p.class, ClassId(3));
        assert_eq!(p.weight, 1.0);
        for (a, b) in p.pos.iter().zip([0.3, 0.1, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }

        g.set([3, 3, 3], ClassId(7)).unwrap();
        g.set([2, 1, 0], ClassId(1)).unwrap();
        assert_eq!(devoxelize(&g).unwrap().len(), 3);

        g.set([0, 0, 0], ClassId::INVALID).unwrap();
        assert!(devoxelize(&g).is_err());
    }

    #[test]
    fn transform_cases() {
        let mut g = VoxelGrid::empty(small_spec(), 0);
        g.set([1, 2, 3], ClassId(2)).unwrap();
        let cloud = devoxelize(&g).unwrap();
        assert_eq!(transform_cloud(&cloud, &Pose::IDENTITY), cloud);
        let up = transform_cloud(&cloud, &Pose::translation([0.0, 0.0, 1.0]));
        assert_eq!(up.points[0].pos[2], cloud.points[0].pos[2] + 1.0);

        let unit = SemanticPointCloud {
            points: vec![SemanticPoint {
                pos: [1.0, 0.0, 0.0],
                class: ClassId(1),
                weight: 1.0,
            }],
        };
        let r = transform_cloud(&unit, &Pose::rotation_z(FRAC_PI_2));
        let q = r.points[0].pos;
        assert!(q[0].abs() < 1e-12 && (q[1] - 1.0).abs() < 1e-12 && q[2].abs() < 1e-12);
    }

    /// Camera frame points expressed through the default axis-swap extrinsic.
    fn cam_weight(p_cam: [f64; 3]) -> f64 {
        let cam = CameraWeights::default();
        let p_lidar = cam.lidar_to_cam.invert().transform_point(p_cam);
        camera_weight(p_cam, p_lidar, &cam)
    }

    #[test]
    fn camera_weight_cases() {
        assert_eq!(cam_weight([0.0, 0.0, 5.0]), 1.0);
        assert_eq!(cam_weight([0.0, 0.0, -5.0]), 0.01);
        assert_eq!(cam_weight([0.0, 0.0, 40.0]), 0.1);
        // outside the horizontal fov
        assert_eq!(cam_weight([10.0, 0.0, 5.0]), 0.01);
    }

    #[test]
    fn lidar_weight_cases() {
        let l = LidarWeights::default();
        assert_eq!(lidar_weight(0.0, &l).unwrap(), 10.0);
        assert_eq!(lidar_weight(l.max_range, &l).unwrap(), 0.1);
        assert!((lidar_weight(l.max_range / 2.0, &l).unwrap() - 5.05).abs() < 1e-12);
        assert_eq!(lidar_weight(1e3, &l).unwrap(), 0.1);
        assert!(lidar_weight(-1.0, &l).is_err());
    }

    #[test]
    fn voxelize_cases() {
        let spec = small_spec();
        let mut acc = VoteAccumulator::new(spec, 19);
        let center = spec.voxel_center([1, 1, 1]).unwrap();
        let pt = |pos, class| SemanticPoint {
            pos,
            class: ClassId(class),
            weight: 1.0,
        };
        let stats = acc
            .voxelize_into(&SemanticPointCloud {
                points: vec![pt(center, 3), pt([0.801, 0.1, 0.1], 3), pt(center, 3)],
            })
            .unwrap();
        assert_eq!(stats, VoxelizeStats { accepted: 2, dropped: 1 });
        let l = spec.index_to_linear([1, 1, 1]).unwrap();
        assert_eq!(acc.voxel_sums(l)[2], 2.0);
        assert!(acc
            .voxelize_into(&SemanticPointCloud {
                points: vec![pt([f64::NAN, 0.0, 0.0], 1)]
            })
            .is_err());
    }

    #[test]
    fn vote_cases() {
        let spec = GridSpec::new([1, 1, 3], [0.0; 3], [1.0; 3]).unwrap();
        let mut acc = VoteAccumulator::new(spec, 19);
        acc.add(0, ClassId(3), 2.0);
        acc.add(0, ClassId(5), 1.0);
        acc.add(1, ClassId(3), 1.0);
        acc.add(1, ClassId(5), 10.0);
        let g = vote(&acc).unwrap();
        assert_eq!(g.labels(), &[ClassId(3), ClassId(5), ClassId::FREE]);

        let mut tie = VoteAccumulator::new(spec, 19);
        tie.add(0, ClassId(9), 1.0);
        tie.add(0, ClassId(4), 1.0);
        assert_eq!(vote(&tie).unwrap().labels()[0], ClassId(4));

        let mut nan = VoteAccumulator::new(spec, 19);
        nan.add(2, ClassId(1), f64::NAN);
        assert!(matches!(vote(&nan), Err(Error::Internal(_))));
    }

    fn random_grid(spec: GridSpec, seed: u64, fill: f64) -> VoxelGrid {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels = (0..spec.num_voxels())
            .map(|_| {
                if rng.gen::<f64>() < fill {
                    ClassId(rng.gen_range(1..=19))
                } else {
                    ClassId::FREE
                }
            })
            .collect();
        VoxelGrid::from_labels(spec, labels, 0, 19).unwrap()
    }

    #[test]
    fn window_self_fusion_and_unanimity() {
        let spec = GridSpec::new([8, 6, 4], [0.0, -0.6, -0.4], [0.2; 3]).unwrap();
        let g = random_grid(spec, 3, 0.4);
        let poses = vec![Pose::IDENTITY; 2];
        let (fused, _) = fuse_window(std::slice::from_ref(&g), &poses, 0, 0, &WeightProfile::Uniform, 19).unwrap();
        assert_eq!(fused, g);

        let mut g2 = g.clone();
        g2.frame_id = 1;
        let (fused, stats) =
            fuse_window(&[g.clone(), g2], &poses, 0, 1, &WeightProfile::Uniform, 19).unwrap();
        assert_eq!(fused.labels(), g.labels());
        assert_eq!(stats.frames, 2);
        assert_eq!(stats.dropped, 0);
    }

    #[test]
    fn missing_pose_names_frame() {
        let spec = small_spec();
        let mut a = VoxelGrid::empty(spec, 0);
        a.frame_id = 0;
        let mut b = VoxelGrid::empty(spec, 7);
        b.frame_id = 7;
        let err = fuse_window(&[a, b], &[Pose::IDENTITY], 0, 1, &WeightProfile::Uniform, 19).unwrap_err();
        assert!(matches!(err, Error::MissingPose { frame_id: 7 }));
    }

    #[test]
    fn profile_config_parsing() {
        let p = WeightProfile::from_config_str("mode = \"lidar\"\nmax_range = 40.0\n", None).unwrap();
        assert_eq!(
            p,
            WeightProfile::Lidar(LidarWeights {
                max_range: 40.0,
                ..Default::default()
            })
        );
        let cam = WeightProfile::Camera(CameraWeights::default());
        let again = WeightProfile::from_config_str(&cam.to_config_string(), None).unwrap();
        assert_eq!(again, cam);
        assert!(WeightProfile::from_config_str("mode = \"camera\"\nw_low = 2.0\n", None).is_err());
        assert!(WeightProfile::from_config_str("mode = \"sonar\"\n", None).is_err());
        assert!(WeightProfile::from_config_str("mode = \"uniform\"\nbogus = 1\n", None).is_err());
    }

    proptest! {
        #[test]
        fn devoxelize_voxelize_round_trip(seed in any::<u64>(), fill in 0.0f64..1.0) {
            let spec = GridSpec::new([7, 5, 3], [-0.7, 1.3, -2.0], [0.2, 0.3, 0.4]).unwrap();
            let g = random_grid(spec, seed, fill);
            let mut acc = VoteAccumulator::new(spec, 19);
            acc.voxelize_into(&devoxelize(&g).unwrap()).unwrap();
            let voted = vote(&acc).unwrap();
            prop_assert_eq!(voted.labels(), g.labels());
        }

        #[test]
        fn adding_to_the_winner_keeps_it(sums in prop::collection::vec(0.0f64..5.0, 19), extra in 0.0f64..5.0) {
            let winner = argmax_class(&sums).unwrap();
            prop_assume!(winner.is_occupied());
            let mut more = sums.clone();
            more[winner.index() - 1] += extra;
            prop_assert_eq!(argmax_class(&more).unwrap(), winner);
        }

        #[test]
        fn frustum_predicate_is_scale_invariant(p in prop::array::uniform3(-30.0f64..30.0), s in 0.01f64..100.0) {
            let cam = CameraWeights::default();
            let q = p.map(|v| v * s);
            prop_assert_eq!(
                in_camera_frustum(p, cam.fov_w, cam.fov_h),
                in_camera_frustum(q, cam.fov_w, cam.fov_h)
            );
        }

        #[test]
        fn weights_stay_in_bounds(p in prop::array::uniform3(-80.0f64..80.0)) {
            let cam = CameraWeights::default();
            let w = WeightProfile::Camera(cam).sensor_weight(p);
            prop_assert!(w == cam.w_high || w == cam.w_med || w == cam.w_low);
            let l = LidarWeights::default();
            let w = WeightProfile::Lidar(l).sensor_weight(p);
            prop_assert!(w >= l.w_min && w <= l.w_max);
        }
    }
}
