//! Synthetic urban scenes, noisy per-frame renders and a brute-force voting
//! reference used to validate fusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{in_camera_frustum, LidarWeights, WeightProfile};
use crate::geometry::{relative_lidar_pose, Pose};
use crate::grid::{ClassId, GridSpec, VoxelGrid};

pub const ROAD: ClassId = ClassId(9);
pub const SIDEWALK: ClassId = ClassId(11);
pub const BUILDING: ClassId = ClassId(13);
pub const FENCE: ClassId = ClassId(14);
pub const VEGETATION: ClassId = ClassId(15);
pub const TRUNK: ClassId = ClassId(16);
pub const TERRAIN: ClassId = ClassId(17);
pub const POLE: ClassId = ClassId(18);
pub const TRAFFIC_SIGN: ClassId = ClassId(19);
pub const CAR: ClassId = ClassId(1);
pub const PERSON: ClassId = ClassId(6);

/// Scene element in world meters. A voxel belongs to a primitive when its
/// center does.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Horizontal slab `z_min <= z < z_max` over the whole world.
    Ground { z_min: f64, z_max: f64, class: ClassId },
    /// Axis-aligned box `min <= p < max`.
    Box { min: [f64; 3], max: [f64; 3], class: ClassId },
    /// Vertical cylinder.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
        class: ClassId,
    },
    /// Flat band around the segment `a`-`b` in the xy plane.
    Ribbon {
        a: [f64; 2],
        b: [f64; 2],
        half_width: f64,
        z_min: f64,
        z_max: f64,
        class: ClassId,
    },
}

impl Primitive {
    pub fn class(&self) -> ClassId {
        match *self {
            Primitive::Ground { class, .. }
            | Primitive::Box { class, .. }
            | Primitive::Cylinder { class, .. }
            | Primitive::Ribbon { class, .. } => class,
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let [x, y, z] = p;
        match *self {
            Primitive::Ground { z_min, z_max, .. } => z >= z_min && z < z_max,
            Primitive::Box { min, max, .. } => (0..3).all(|a| p[a] >= min[a] && p[a] < max[a]),
            Primitive::Cylinder {
                center,
                radius,
                z_min,
                z_max,
                ..
            } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                z >= z_min && z < z_max && dx * dx + dy * dy <= radius * radius
            }
            Primitive::Ribbon {
                a,
                b,
                half_width,
                z_min,
                z_max,
                ..
            } => {
                if z < z_min || z >= z_max {
                    return false;
                }
                let (ux, uy) = (b[0] - a[0], b[1] - a[1]);
                let len2 = ux * ux + uy * uy;
                let t = if len2 > 0.0 {
                    (((x - a[0]) * ux + (y - a[1]) * uy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (dx, dy) = (x - a[0] - t * ux, y - a[1] - t * uy);
                dx * dx + dy * dy <= half_width * half_width
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    /// World volume the primitives are rasterized into.
    pub spec: GridSpec,
    /// Later primitives overwrite earlier ones.
    pub primitives: Vec<Primitive>,
    /// LiDAR-to-world pose per scan.
    pub trajectory: Vec<Pose>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            if !p.class().is_occupied() {
                return Err(Error::Config(format!("primitive class {} is not an occupied class", p.class())));
            }
        }
        Ok(())
    }
}

/// Rasterizes the scene primitives into the world volume.
pub fn generate_world(cfg: &SceneConfig) -> Result<VoxelGrid> {
    cfg.validate()?;
    let spec = cfg.spec;
    let mut labels = vec![ClassId::FREE; spec.num_voxels()];
    for (lin, label) in labels.iter_mut().enumerate() {
        let c = spec.center_unchecked(spec.index_unchecked(lin));
        for p in &cfg.primitives {
            if p.contains(c) {
                *label = p.class();
            }
        }
    }
    Ok(VoxelGrid::from_labels_unchecked(spec, labels, 0))
}

/// Straight drive along world x with an optional sinusoidal yaw.
pub fn straight_trajectory(scans: usize, step: f64, start: [f64; 3], yaw_amplitude: f64) -> Vec<Pose> {
    (0..scans)
        .map(|s| {
            let yaw = yaw_amplitude * (s as f64 * 0.15).sin();
            Pose::translation([start[0] + s as f64 * step, start[1], start[2]]) * Pose::rotation_z(yaw)
        })
        .collect()
}

/// Random street: road and sidewalks along x, buildings, fences and
/// vegetation on both sides, poles, trunks, signs, parked cars and people.
/// The world spans `length` meters of x starting at 0 and `width` meters of y
/// centered on the road; z starts about 3 m below the sensor height.
pub fn random_urban_scene(seed: u64, length: f64, width: f64, voxel: f64, height_voxels: usize) -> Result<SceneConfig> {
    let dims = [
        (length / voxel).ceil() as usize,
        (width / voxel).ceil() as usize,
        height_voxels,
    ];
    // z origin keeps voxel centers of a sensor at height 0 with a -2 m frame
    // floor on world voxel centers
    let z0 = -2.0 - voxel * (1.0 / voxel - 1e-9).ceil();
    let spec = GridSpec::new(dims, [0.0, -width / 2.0, z0], [voxel; 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = vec![Primitive::Ground {
        z_min: z0,
        z_max: -1.7,
        class: TERRAIN,
    }];
    let road_half = rng.gen_range(4.0..6.0);
    let walk = rng.gen_range(2.0..3.5);
    prims.push(Primitive::Box {
        min: [0.0, -road_half - walk, z0],
        max: [length, road_half + walk, -1.5],
        class: SIDEWALK,
    });
    prims.push(Primitive::Ribbon {
        a: [0.0, 0.0],
        b: [length, 0.0],
        half_width: road_half,
        z_min: z0,
        z_max: -1.7,
        class: ROAD,
    });
    let side = road_half + walk;
    for sign in [-1.0, 1.0] {
        let mut x = rng.gen_range(0.0..6.0);
        while x < length {
            let len = rng.gen_range(6.0..18.0);
            let depth = rng.gen_range(4.0..10.0);
            let gap = rng.gen_range(1.0..8.0);
            let y0 = side + rng.gen_range(1.0..4.0);
            let (ya, yb) = if sign > 0.0 { (y0, y0 + depth) } else { (-y0 - depth, -y0) };
            match rng.gen_range(0..10) {
                0..=5 => prims.push(Primitive::Box {
                    min: [x, ya, -1.8],
                    max: [x + len, yb, rng.gen_range(2.0..12.0)],
                    class: BUILDING,
                }),
                6..=7 => prims.push(Primitive::Box {
                    min: [x, ya, -1.8],
                    max: [x + len, yb, rng.gen_range(-0.5..2.5)],
                    class: VEGETATION,
                }),
                _ => prims.push(Primitive::Box {
                    min: [x, if sign > 0.0 { y0 } else { -y0 - 0.4 }, -1.8],
                    max: [x + len, if sign > 0.0 { y0 + 0.4 } else { -y0 }, -0.4],
                    class: FENCE,
                }),
            }
            x += len + gap;
        }
        let mut x = rng.gen_range(0.0..10.0);
        while x < length {
            let y = sign * (side - rng.gen_range(0.3..1.2));
            match rng.gen_range(0..3) {
                0 => {
                    prims.push(Primitive::Cylinder {
                        center: [x, y],
                        radius: 0.3,
                        z_min: -1.8,
                        z_max: 1.5,
                        class: TRUNK,
                    });
                    prims.push(Primitive::Cylinder {
                        center: [x, y],
                        radius: rng.gen_range(1.2..2.5),
                        z_min: 1.5,
                        z_max: rng.gen_range(3.0..5.0),
                        class: VEGETATION,
                    });
                }
                1 => prims.push(Primitive::Cylinder {
                    center: [x, y],
                    radius: 0.2,
                    z_min: -1.8,
                    z_max: 3.5,
                    class: POLE,
                }),
                _ => {
                    prims.push(Primitive::Cylinder {
                        center: [x, y],
                        radius: 0.15,
                        z_min: -1.8,
                        z_max: 1.8,
                        class: POLE,
                    });
                    prims.push(Primitive::Box {
                        min: [x - 0.1, y - 0.5, 1.8],
                        max: [x + 0.1, y + 0.5, 2.6],
                        class: TRAFFIC_SIGN,
                    });
                }
            }
            x += rng.gen_range(6.0..15.0);
        }
        let mut x = rng.gen_range(0.0..15.0);
        while x < length {
            let lane = sign * (road_half - rng.gen_range(1.0..1.6));
            prims.push(Primitive::Box {
                min: [x, lane - 0.9, -1.8],
                max: [x + rng.gen_range(3.8..4.8), lane + 0.9, -0.3],
                class: CAR,
            });
            x += rng.gen_range(7.0..25.0);
        }
        let mut x = rng.gen_range(0.0..20.0);
        while x < length {
            let y = sign * (road_half + rng.gen_range(0.5..walk));
            prims.push(Primitive::Box {
                min: [x, y - 0.3, -1.6],
                max: [x + 0.6, y + 0.3, 0.2],
                class: PERSON,
            });
            x += rng.gen_range(10.0..30.0);
        }
    }
    Ok(SceneConfig {
        seed,
        spec,
        primitives: prims,
        trajectory: Vec::new(),
    })
}

/// Camera-like visibility mask applied to rendered frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrustumMask {
    pub fov_w: f64,
    pub fov_h: f64,
    pub lidar_to_cam: Pose,
}

impl Default for FrustumMask {
    fn default() -> Self {
        let c = crate::fusion::CameraWeights::default();
        Self {
            fov_w: c.fov_w,
            fov_h: c.fov_h,
            lidar_to_cam: c.lidar_to_cam,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    /// Probability that a surviving occupied voxel changes class.
    pub flip_rate: f64,
    /// Probability that an occupied voxel becomes free.
    pub deletion_rate: f64,
    /// Probability that a free voxel becomes a random occupied class.
    pub hallucination_rate: f64,
    /// Range-dependent systematic confusion `(rate, range)`: a voxel at
    /// distance `r` is relabelled to the next class id (cyclic) with
    /// probability `rate * min(r / range, 1)`.
    pub range_confusion: Option<(f64, f64)>,
    pub frustum: Option<FrustumMask>,
    pub num_classes: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            flip_rate: 0.0,
            deletion_rate: 0.0,
            hallucination_rate: 0.02,
            range_confusion: None,
            frustum: None,
            num_classes: 19,
        }
    }
}

impl NoiseModel {
    pub fn noiseless(num_classes: usize) -> Self {
        Self {
            hallucination_rate: 0.0,
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let far_ok = self.range_confusion.is_none_or(|(p, r)| unit(p) && r > 0.0);
        if !unit(self.flip_rate) || !unit(self.deletion_rate) || !unit(self.hallucination_rate) || !far_ok {
            return Err(Error::Config("noise rates must lie in [0, 1]".into()));
        }
        if self.num_classes < 2 || self.num_classes > 254 {
            return Err(Error::Config(format!("noise needs 2..=254 classes, got {}", self.num_classes)));
        }
        Ok(())
    }

    fn confusion_at(&self, c: [f64; 3]) -> f64 {
        match self.range_confusion {
            None => 0.0,
            Some((rate, range)) => rate * ((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() / range).min(1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    /// Occupied voxels before noise.
    pub occupied: usize,
    pub deleted: usize,
    pub flipped: usize,
    pub confused: usize,
    pub hallucinated: usize,
    /// Voxels zeroed by the frustum mask.
    pub masked: usize,
}

/// Samples the world at each voxel center of a frame volume placed at `pose`
/// (LiDAR to world), then applies noise. Voxels outside the world are free.
pub fn render_frame(
    world: &VoxelGrid,
    pose: &Pose,
    frame_spec: &GridSpec,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<(VoxelGrid, RenderStats)> {
    noise.validate()?;
    let mut stats = RenderStats::default();
    let c_max = noise.num_classes as u8;
    let mut labels = Vec::with_capacity(frame_spec.num_voxels());
    for lin in 0..frame_spec.num_voxels() {
        let c = frame_spec.center_unchecked(frame_spec.index_unchecked(lin));
        let truth = world
            .spec()
            .point_to_index(pose.transform_point(c))
            .map(|i| world.labels()[world.spec().linear_unchecked(i)])
            .unwrap_or(ClassId::FREE);
        let mut label = if truth.is_occupied() {
            stats.occupied += 1;
            if rng.gen_bool(noise.deletion_rate) {
                stats.deleted += 1;
                ClassId::FREE
            } else if rng.gen_bool(noise.flip_rate) {
                stats.flipped += 1;
                // uniform over the other classes
                let k = rng.gen_range(1..c_max);
                ClassId(if k >= truth.0 { k + 1 } else { k })
            } else if noise.range_confusion.is_some() && rng.gen_bool(noise.confusion_at(c)) {
                stats.confused += 1;
                ClassId(truth.0 % c_max + 1)
            } else {
                truth
            }
        } else if rng.gen_bool(noise.hallucination_rate) {
            stats.hallucinated += 1;
            ClassId(rng.gen_range(1..=c_max))
        } else {
            ClassId::FREE
        };
        if let Some(f) = &noise.frustum {
            if label.is_occupied() && !in_camera_frustum(f.lidar_to_cam.transform_point(c), f.fov_w, f.fov_h) {
                stats.masked += 1;
                label = ClassId::FREE;
            }
        }
        labels.push(label);
    }
    Ok((VoxelGrid::from_labels_unchecked(*frame_spec, labels, 0), stats))
}

/// World, noisy frames and their noise-free counterparts.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub world: VoxelGrid,
    /// LiDAR-to-world pose per scan index.
    pub poses: Vec<Pose>,
    pub frames: Vec<VoxelGrid>,
    pub truth: Vec<VoxelGrid>,
    pub stats: Vec<RenderStats>,
}

/// Renders every `scan_step`-th scan of the trajectory. Frame ids are scan
/// indices. Each frame draws from its own generator seeded by `(seed, id)`.
pub fn render_sequence(
    scene: &SceneConfig,
    frame_spec: &GridSpec,
    noise: &NoiseModel,
    scan_step: usize,
) -> Result<SyntheticSequence> {
    if scan_step == 0 {
        return Err(Error::Config("scan step must be positive".into()));
    }
    let world = generate_world(scene)?;
    let clean = NoiseModel::noiseless(noise.num_classes);
    let mut seq = SyntheticSequence {
        world,
        poses: scene.trajectory.clone(),
        frames: Vec::new(),
        truth: Vec::new(),
        stats: Vec::new(),
    };
    for id in (0..scene.trajectory.len()).step_by(scan_step) {
        let pose = &scene.trajectory[id];
        let mut rng = frame_rng(scene.seed, id as u64);
        let (mut f, s) = render_frame(&seq.world, pose, frame_spec, noise, &mut rng)?;
        let (mut t, _) = render_frame(&seq.world, pose, frame_spec, &clean, &mut rng)?;
        f.frame_id = id as u32;
        t.frame_id = id as u32;
        seq.frames.push(f);
        seq.truth.push(t);
        seq.stats.push(s);
    }
    Ok(seq)
}

pub fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

fn oracle_weight(profile: &WeightProfile, p: [f64; 3]) -> f64 {
    match profile {
        WeightProfile::Uniform => 1.0,
        WeightProfile::Camera(cam) => {
            let m = cam.lidar_to_cam.matrix();
            let mut q = [0.0; 3];
            for r in 0..3 {
                q[r] = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
            }
            let in_fov = q[2] > 0.0
                && q[0].atan2(q[2]).abs() <= cam.fov_w / 2.0
                && q[1].atan2(q[2]).abs() <= cam.fov_h / 2.0;
            let in_box = p[0] >= cam.bbox_min[0]
                && p[0] <= cam.bbox_max[0]
                && p[1] >= cam.bbox_min[1]
                && p[1] <= cam.bbox_max[1]
                && p[2] >= cam.bbox_min[2]
                && p[2] <= cam.bbox_max[2];
            if !in_fov {
                cam.w_low
            } else if in_box {
                cam.w_high
            } else {
                cam.w_med
            }
        }
        WeightProfile::Lidar(LidarWeights { w_max, w_min, max_range }) => {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let s = if r / max_range < 1.0 { r / max_range } else { 1.0 };
            w_min * s + w_max * (1.0 - s)
        }
    }
}

/// Reference fusion of all `frames` into `frames[target]` by direct loops:
/// every occupied voxel center is weighted in its own frame, moved into the
/// target frame, floored to a target voxel and added to that voxel's class
/// sum. The largest sum wins, ties go to the lower class, empty voxels stay
/// free. `poses` are LiDAR-to-world poses indexed by frame id.
pub fn oracle_vote(
    frames: &[VoxelGrid],
    poses: &[Pose],
    target: usize,
    profile: &WeightProfile,
    num_classes: usize,
) -> Result<VoxelGrid> {
    let tgt = frames
        .get(target)
        .ok_or_else(|| Error::invalid(format!("target {target} out of range")))?;
    let pose = |id: u32| poses.get(id as usize).ok_or(Error::MissingPose { frame_id: id });
    let ts = *tgt.spec();
    let [tx, ty, tz] = ts.dims;
    let mut sums = vec![vec![0.0f64; num_classes + 1]; tx * ty * tz];
    for f in frames {
        let rel = relative_lidar_pose(pose(f.frame_id)?, pose(tgt.frame_id)?);
        let m = rel.matrix();
        let s = f.spec();
        let [nx, ny, nz] = s.dims;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let class = f.labels()[(x * ny + y) * nz + z];
                    if class.is_invalid() {
                        return Err(Error::invalid("frame contains invalid voxels"));
                    }
                    if class.is_free() {
                        continue;
                    }
                    let c = [
                        s.origin[0] + (x as f64 + 0.5) * s.voxel_size[0],
                        s.origin[1] + (y as f64 + 0.5) * s.voxel_size[1],
                        s.origin[2] + (z as f64 + 0.5) * s.voxel_size[2],
                    ];
                    let w = 1.0 * oracle_weight(profile, c);
                    let mut q = [0.0; 3];
                    for r in 0..3 {
                        q[r] = m[r][0] * c[0] + m[r][1] * c[1] + m[r][2] * c[2] + m[r][3];
                    }
                    let mut idx = [0usize; 3];
                    let mut inside = true;
                    for a in 0..3 {
                        let v = ((q[a] - ts.origin[a]) / ts.voxel_size[a]).floor();
                        if v >= 0.0 && v < ts.dims[a] as f64 {
                            idx[a] = v as usize;
                        } else {
                            inside = false;
                        }
                    }
                    if inside {
                        sums[(idx[0] * ty + idx[1]) * tz + idx[2]][class.index()] += w;
                    }
                }
            }
        }
    }
    let mut labels = vec![ClassId::FREE; tx * ty * tz];
    for (l, s) in sums.iter().enumerate() {
        let mut best = 0;
        for k in 1..=num_classes {
            if s[k] > s[best] {
                best = k;
            }
        }
        labels[l] = ClassId(best as u8);
    }
    Ok(VoxelGrid::from_labels_unchecked(ts, labels, tgt.frame_id))
}
