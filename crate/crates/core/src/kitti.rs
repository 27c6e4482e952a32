//! SemanticKITTI on-disk formats: voxel label files, invalid masks,
//! odometry poses and calibration.
//!
//! Layout of a sequence directory:
//!
//! ```text
//! sequences/<id>/
//!   calib.txt
//!   poses.txt
//!   voxels/000000.label
//!   voxels/000000.invalid
//!   voxels/000005.label
//!   ...
//! ```
//!
//! Label files hold one little-endian u16 raw label per voxel, x-major with z
//! fastest. Invalid masks pack one bit per voxel, most significant bit first.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{camera_pose_to_lidar, FrameCalib, Intrinsics, Pose};
use crate::grid::{ClassId, GridSpec, VoxelGrid};

const SEMANTIC_KITTI_MAP: &str = include_str!("../config/semantic-kitti.toml");

/// Raw dataset label <-> training class id tables.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    forward: BTreeMap<u16, ClassId>,
    inverse: Vec<Option<u16>>,
    num_classes: usize,
}

#[derive(Deserialize)]
struct LabelMapFile {
    learning_map: BTreeMap<String, u16>,
    learning_map_inv: BTreeMap<String, u16>,
}

impl LabelMap {
    pub fn semantic_kitti() -> Self {
        Self::from_config_str(SEMANTIC_KITTI_MAP).expect("vendored label map is valid")
    }

    /// Parses a map with `[learning_map]` and `[learning_map_inv]` tables.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let file: LabelMapFile = toml::from_str(text).map_err(|e| Error::Config(format!("label map: {e}")))?;
        let key = |k: &str| {
            k.parse::<u16>()
                .map_err(|_| Error::Config(format!("label map key '{k}' is not a u16")))
        };
        let mut forward = BTreeMap::new();
        for (k, v) in &file.learning_map {
            if *v >= 255 {
                return Err(Error::Config(format!("train id {v} must be < 255")));
            }
            forward.insert(key(k)?, ClassId(*v as u8));
        }
        let mut inverse = vec![None; 256];
        for (k, v) in &file.learning_map_inv {
            let c = key(k)?;
            if c >= 255 {
                return Err(Error::Config(format!("train id {c} must be < 255")));
            }
            inverse[c as usize] = Some(*v);
        }
        let num_classes = forward.values().map(|c| c.index()).max().unwrap_or(0);
        for c in 0..=num_classes {
            let raw = inverse[c].ok_or_else(|| Error::Config(format!("no inverse mapping for class {c}")))?;
            if forward.get(&raw) != Some(&ClassId(c as u8)) {
                return Err(Error::Config(format!(
                    "inverse of class {c} is raw {raw}, which does not map back to {c}"
                )));
            }
        }
        Ok(Self {
            forward,
            inverse,
            num_classes,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_config_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn to_class(&self, raw: u16) -> Option<ClassId> {
        self.forward.get(&raw).copied()
    }

    pub fn to_raw(&self, class: ClassId) -> Option<u16> {
        self.inverse.get(class.index()).copied().flatten()
    }
}

impl Default for LabelMap {
    fn default() -> Self {
        Self::semantic_kitti()
    }
}

fn frame_id_from_path(path: &Path) -> u32 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

/// Decodes a raw label buffer for `spec`.
pub fn decode_labels(bytes: &[u8], spec: GridSpec, map: &LabelMap, path: &Path) -> Result<VoxelGrid> {
    let expected = spec.num_voxels() * 2;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes of u16 labels, found {}", bytes.len()),
        ));
    }
    let labels = bytes
        .chunks_exact(2)
        .map(|b| {
            let raw = u16::from_le_bytes([b[0], b[1]]);
            map.to_class(raw)
                .ok_or_else(|| Error::format(path, format!("unknown raw label {raw}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VoxelGrid::from_labels_unchecked(spec, labels, frame_id_from_path(path)))
}

pub fn read_label_grid(path: &Path, spec: GridSpec, map: &LabelMap) -> Result<VoxelGrid> {
    let bytes = fs::read(path)?;
    decode_labels(&bytes, spec, map, path)
}

pub fn encode_labels(grid: &VoxelGrid, map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(grid.labels().len() * 2);
    for &c in grid.labels() {
        let raw = map
            .to_raw(c)
            .ok_or_else(|| Error::invalid(format!("class {c} has no raw label")))?;
        out.extend_from_slice(&raw.to_le_bytes());
    }
    Ok(out)
}

/// Writes raw labels; the grid must not contain the invalid label.
pub fn write_label_grid(grid: &VoxelGrid, path: &Path, map: &LabelMap) -> Result<()> {
    grid.validate_prediction()?;
    let bytes = encode_labels(grid, map)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn unpack_mask(bytes: &[u8], spec: GridSpec, path: &Path) -> Result<Vec<bool>> {
    let n = spec.num_voxels();
    let expected = n.div_ceil(8);
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes of packed mask bits, found {}", bytes.len()),
        ));
    }
    Ok((0..n).map(|i| bytes[i / 8] >> (7 - i % 8) & 1 == 1).collect())
}

pub fn pack_mask(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        out[i / 8] |= 0x80 >> (i % 8);
    }
    out
}

pub fn read_invalid_mask(path: &Path, spec: GridSpec) -> Result<Vec<bool>> {
    let bytes = fs::read(path)?;
    unpack_mask(&bytes, spec, path)
}

pub fn write_invalid_mask(mask: &[bool], path: &Path) -> Result<()> {
    fs::write(path, pack_mask(mask))?;
    Ok(())
}

fn parse_floats<const N: usize>(text: &str, path: &Path, line_no: usize) -> Result<[f64; N]> {
    let values = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {line_no}: cannot parse '{t}' as a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    values.try_into().map_err(|v: Vec<f64>| {
        Error::format(path, format!("line {line_no}: expected {N} values, found {}", v.len()))
    })
}

fn pose_from_line(text: &str, path: &Path, line_no: usize) -> Result<Pose> {
    let v = parse_floats::<12>(text, path, line_no)?;
    Pose::from_3x4(&v).map_err(|e| Error::format(path, format!("line {line_no}: {e}")))
}

/// Camera-0 to world poses, one 3x4 row-major matrix per line.
pub fn read_camera_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| pose_from_line(l, path, i + 1))
        .collect()
}

/// Reads `Tr` (LiDAR to camera-0) and the intrinsics of `P2` from a KITTI
/// calibration file. The image size is not stored in the file and defaults to
/// the KITTI odometry resolution.
pub fn read_calib(path: &Path) -> Result<FrameCalib> {
    let text = fs::read_to_string(path)?;
    let mut tr = None;
    let mut p2 = None;
    let mut p0 = None;
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "Tr" | "Tr_velo_to_cam" => tr = Some(pose_from_line(rest, path, i + 1)?),
            "P2" => p2 = Some(parse_floats::<12>(rest, path, i + 1)?),
            "P0" => p0 = Some(parse_floats::<12>(rest, path, i + 1)?),
            _ => {}
        }
    }
    let lidar_to_cam = tr.ok_or_else(|| Error::format(path, "no 'Tr:' line"))?;
    let base = Intrinsics::kitti();
    let intrinsics = match p2.or(p0) {
        Some(p) => Intrinsics::new(p[0], p[5], p[2], p[6], base.image_w, base.image_h)
            .map_err(|e| Error::format(path, e.to_string()))?,
        None => base,
    };
    Ok(FrameCalib {
        lidar_to_cam,
        intrinsics,
    })
}

/// LiDAR-to-world poses `Tr^-1 * P_i * Tr` for every line of a poses file.
pub fn read_poses(poses_path: &Path, calib_path: &Path) -> Result<Vec<Pose>> {
    let calib = read_calib(calib_path)?;
    Ok(read_camera_poses(poses_path)?
        .iter()
        .map(|p| camera_pose_to_lidar(p, &calib.lidar_to_cam))
        .collect())
}

fn format_3x4(p: &Pose) -> String {
    let m = p.matrix();
    (0..3)
        .flat_map(|r| (0..4).map(move |c| m[r][c]))
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_camera_poses(poses: &[Pose], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for p in poses {
        writeln!(f, "{}", format_3x4(p))?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_calib(calib: &FrameCalib, path: &Path) -> Result<()> {
    let k = &calib.intrinsics;
    let p = format!(
        "{:e} 0e0 {:e} 0e0 0e0 {:e} {:e} 0e0 0e0 0e0 1e0 0e0",
        k.fx, k.cx, k.fy, k.cy
    );
    let text = format!("P0: {p}\nP2: {p}\nTr: {}\n", format_3x4(&calib.lidar_to_cam));
    fs::write(path, text)?;
    Ok(())
}

/// Frames, poses and calibration of one sequence directory.
#[derive(Clone, Debug)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub sequence_id: String,
    pub labels_dir: PathBuf,
    /// Scan indices of the voxel frames, ascending.
    pub frame_ids: Vec<u32>,
    /// LiDAR-to-world pose per scan index.
    pub poses: Vec<Pose>,
    pub calib: FrameCalib,
}

impl SequenceManifest {
    /// Loads `<root>/poses.txt`, `<root>/calib.txt` and the `.label` files of
    /// `labels_dir` (default `<root>/voxels`).
    pub fn load(root: &Path, labels_dir: Option<&Path>) -> Result<Self> {
        let calib_path = root.join("calib.txt");
        let poses_path = root.join("poses.txt");
        for p in [&calib_path, &poses_path] {
            if !p.is_file() {
                return Err(Error::MissingData(format!("{} not found", p.display())));
            }
        }
        let calib = read_calib(&calib_path)?;
        let poses = read_camera_poses(&poses_path)?
            .iter()
            .map(|p| camera_pose_to_lidar(p, &calib.lidar_to_cam))
            .collect::<Vec<_>>();
        let labels_dir = labels_dir.map(Path::to_path_buf).unwrap_or_else(|| root.join("voxels"));
        let frame_ids = list_label_frames(&labels_dir)?;
        if let Some(&max) = frame_ids.last() {
            if max as usize >= poses.len() {
                return Err(Error::format(
                    &poses_path,
                    format!("{} poses but frame {max} needs index {max}", poses.len()),
                ));
            }
        }
        let sequence_id = root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            root: root.to_path_buf(),
            sequence_id,
            labels_dir,
            frame_ids,
            poses,
            calib,
        })
    }

    pub fn label_path(&self, frame_id: u32) -> PathBuf {
        self.labels_dir.join(format!("{frame_id:06}.label"))
    }

    pub fn invalid_path(&self, frame_id: u32) -> PathBuf {
        self.labels_dir.join(format!("{frame_id:06}.invalid"))
    }

    pub fn load_frame(&self, frame_id: u32, spec: GridSpec, map: &LabelMap) -> Result<VoxelGrid> {
        let mut g = read_label_grid(&self.label_path(frame_id), spec, map)?;
        g.frame_id = frame_id;
        Ok(g)
    }
}

/// Scan indices of all `NNNNNN.label` files in a directory, ascending.
pub fn list_label_frames(dir: &Path) -> Result<Vec<u32>> {
    if !dir.is_dir() {
        return Err(Error::MissingData(format!("label directory {} not found", dir.display())));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("label") {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| Error::format(&path, "label file name is not a frame number"))?;
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}
