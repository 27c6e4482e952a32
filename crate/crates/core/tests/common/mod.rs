#![allow(dead_code)]

use occrefine::fusion::{CameraWeights, LidarWeights};
use occrefine::{ClassId, GridSpec, Pose, VoxelGrid, WeightProfile};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 19;

pub fn random_grid(rng: &mut ChaCha8Rng, spec: GridSpec, fill: f64, frame_id: u32) -> VoxelGrid {
    let labels = (0..spec.num_voxels())
        .map(|_| {
            if rng.gen_bool(fill) {
                ClassId(rng.gen_range(1..=CLASSES as u8))
            } else {
                ClassId::FREE
            }
        })
        .collect();
    VoxelGrid::from_labels(spec, labels, frame_id, CLASSES).unwrap()
}

pub fn random_spec(rng: &mut ChaCha8Rng, max_dim: usize) -> GridSpec {
    let dims = [0; 3].map(|_| rng.gen_range(2..=max_dim));
    let v = rng.gen_range(0.3..1.2);
    let origin = [
        rng.gen_range(-2.0..1.0),
        -(dims[1] as f64) * v / 2.0 + rng.gen_range(-0.5..0.5),
        rng.gen_range(-3.0..-1.0),
    ];
    GridSpec::new(dims, origin, [v; 3]).unwrap()
}

/// Small rigid motion: yaw-dominant rotation about a random axis plus a
/// translation of a few voxels.
pub fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
    let axis = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), 1.0];
    let angle = rng.gen_range(-0.6..0.6);
    let t = [0; 3].map(|_| rng.gen_range(-scale..scale));
    Pose::from_axis_angle(axis, angle, t)
}

pub fn profiles() -> [WeightProfile; 3] {
    [
        WeightProfile::Uniform,
        WeightProfile::Camera(CameraWeights::default()),
        WeightProfile::Lidar(LidarWeights::default()),
    ]
}
