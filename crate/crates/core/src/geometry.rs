//! Rigid SE(3) poses and frame-chain registration.
//!
//! Conventions: a pose `A_to_B` maps points expressed in frame A into frame B
//! (`p_B = M p_A`). KITTI odometry poses are camera-0 to world; the
//! calibration `Tr` maps LiDAR to camera-0.

use std::ops::Mul;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VoxelGrid};

const BOTTOM_ROW_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-6;
const REPAIR_TOL: f64 = 1e-4;

/// Homogeneous 4x4 rigid transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    m: [[f64; 4]; 4],
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    /// Validates a homogeneous matrix. Rotations that drift from orthonormal
    /// by at most 1e-4 are re-orthonormalized; larger violations are errors.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let bottom = [0.0, 0.0, 0.0, 1.0];
        if m[3].iter().zip(&bottom).any(|(a, b)| (a - b).abs() > BOTTOM_ROW_TOL) {
            return Err(Error::invalid(format!("pose bottom row is {:?}", m[3])));
        }
        let mut rot = [[0.0; 3]; 3];
        for r in 0..3 {
            rot[r].copy_from_slice(&m[r][..3]);
        }
        let err = orthonormality_error(&rot);
        let det = det3(&rot);
        let rot = if err <= ORTHO_TOL && (det - 1.0).abs() <= ORTHO_TOL {
            rot
        } else if err <= REPAIR_TOL && det > 0.0 {
            orthonormalize(rot)
        } else {
            return Err(Error::invalid(format!(
                "pose rotation is not orthonormal (max |RtR - I| = {err:.3e}, det = {det:.6})"
            )));
        };
        let t = [m[0][3], m[1][3], m[2][3]];
        Ok(Self::from_rt(rot, t))
    }

    /// Parses the 12 values of a KITTI 3x4 row-major `[R | t]` line.
    pub fn from_3x4(v: &[f64; 12]) -> Result<Self> {
        Self::from_matrix([
            [v[0], v[1], v[2], v[3]],
            [v[4], v[5], v[6], v[7]],
            [v[8], v[9], v[10], v[11]],
            [0.0, 0.0, 0.0, 1.0],
        ])
    }

    pub(crate) fn from_rt(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = Self::IDENTITY.m;
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        Self { m }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::from_rt([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], t)
    }

    /// Rotation about +z by `angle` radians.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rt([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    }

    /// Rotation about a unit axis (Rodrigues) followed by translation `t`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let [x, y, z] = if n > 0.0 { axis.map(|a| a / n) } else { [0.0, 0.0, 1.0] };
        let (s, c) = angle.sin_cos();
        let k = 1.0 - c;
        let r = [
            [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
            [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
            [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
        ];
        Self::from_rt(r, t)
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| [self.m[r][0], self.m[r][1], self.m[r][2]])
    }

    pub fn translation_part(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// Matrix product `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        // keep the homogeneous row exact
        m[3] = [0.0, 0.0, 0.0, 1.0];
        Pose { m }
    }

    /// Closed-form rigid inverse `[R^T, -R^T t; 0 1]`.
    pub fn invert(&self) -> Pose {
        let r = self.rotation();
        let t = self.translation_part();
        let rt: [[f64; 3]; 3] = std::array::from_fn(|i| [r[0][i], r[1][i], r[2][i]]);
        let ti = std::array::from_fn(|i| -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]));
        Pose::from_rt(rt, ti)
    }

    #[inline]
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        std::array::from_fn(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3])
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn orthonormality_error(r: &[[f64; 3]; 3]) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((dot - target).abs());
        }
    }
    err
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Newton-Schulz polar iteration `R <- R (3I - R^T R) / 2`.
fn orthonormalize(mut r: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    for _ in 0..32 {
        if orthonormality_error(&r) < 1e-15 {
            break;
        }
        let rtr: [[f64; 3]; 3] =
            std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| r[k][i] * r[k][j]).sum()));
        let corr: [[f64; 3]; 3] = std::array::from_fn(|i| {
            std::array::from_fn(|j| (if i == j { 3.0 } else { 0.0 } - rtr[i][j]) * 0.5)
        });
        r = std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| r[i][k] * corr[k][j]).sum()));
    }
    r
}

/// Pinhole intrinsics of the reference camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image_w: u32, image_h: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || image_w == 0 || image_h == 0 {
            return Err(Error::invalid(format!(
                "intrinsics need fx, fy > 0 and a non-empty image (fx={fx}, fy={fy}, {image_w}x{image_h})"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            image_w,
            image_h,
        })
    }

    /// KITTI odometry sequence 00 left color camera.
    pub fn kitti() -> Self {
        Self {
            fx: 718.856,
            fy: 718.856,
            cx: 607.1928,
            cy: 185.2157,
            image_w: 1241,
            image_h: 376,
        }
    }

    pub fn fov_w(&self) -> f64 {
        2.0 * (self.image_w as f64 / (2.0 * self.fx)).atan()
    }

    pub fn fov_h(&self) -> f64 {
        2.0 * (self.image_h as f64 / (2.0 * self.fy)).atan()
    }
}

/// Sensor calibration of one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameCalib {
    /// LiDAR to camera extrinsic (`Tr` in KITTI calib files).
    pub lidar_to_cam: Pose,
    pub intrinsics: Intrinsics,
}

impl FrameCalib {
    /// Axis permutation between a forward-left-up LiDAR and a
    /// right-down-forward camera sharing the same origin.
    pub fn axis_swap_extrinsic() -> Pose {
        Pose::from_rt([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]], [0.0; 3])
    }
}

impl Default for FrameCalib {
    fn default() -> Self {
        Self {
            lidar_to_cam: Self::axis_swap_extrinsic(),
            intrinsics: Intrinsics::kitti(),
        }
    }
}

/// LiDAR-to-LiDAR transform between frame `i` and pivot `t`, from camera-to-world
/// poses: `Tr^-1 * (P_t)^-1 * P_i * Tr`.
pub fn relative_pose(frame_cam_to_world: &Pose, pivot_cam_to_world: &Pose, calib: &FrameCalib) -> Pose {
    if frame_cam_to_world == pivot_cam_to_world {
        return Pose::IDENTITY;
    }
    let tr = &calib.lidar_to_cam;
    tr.invert() * pivot_cam_to_world.invert() * *frame_cam_to_world * *tr
}

/// Same transform from LiDAR-to-world poses: `(L_t)^-1 * L_i`.
pub fn relative_lidar_pose(frame_lidar_to_world: &Pose, pivot_lidar_to_world: &Pose) -> Pose {
    if frame_lidar_to_world == pivot_lidar_to_world {
        return Pose::IDENTITY;
    }
    pivot_lidar_to_world.invert() * *frame_lidar_to_world
}

/// Camera-frame KITTI pose converted to a LiDAR-frame pose: `Tr^-1 * P * Tr`.
pub fn camera_pose_to_lidar(cam_to_world: &Pose, lidar_to_cam: &Pose) -> Pose {
    lidar_to_cam.invert() * *cam_to_world * *lidar_to_cam
}

/// Per-voxel coordinates of a grid's voxel centers expressed in another frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateVolume {
    pub dims: [usize; 3],
    /// Row-major `(nx, ny, nz)` with 3 channels per voxel, meters.
    pub coords: Vec<[f64; 3]>,
}

impl CoordinateVolume {
    pub fn get(&self, spec: &GridSpec, index: [usize; 3]) -> Result<[f64; 3]> {
        Ok(self.coords[spec.index_to_linear(index)?])
    }
}

/// Transforms every voxel center of `grid` by `rel`.
pub fn relative_coordinates(grid: &VoxelGrid, rel: &Pose) -> CoordinateVolume {
    let spec = grid.spec();
    let coords = (0..spec.num_voxels())
        .map(|l| rel.transform_point(spec.center_unchecked(spec.index_unchecked(l))))
        .collect();
    CoordinateVolume {
        dims: spec.dims,
        coords,
    }
}
