//! Run configuration: command-line flags over a TOML config file over
//! built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use occrefine::fusion::{CameraWeights, LidarWeights};
use occrefine::kitti::LabelMap;
use occrefine::{FrameCalib, GridSpec, WeightProfile};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RADIUS: usize = 25;

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub radius: Option<usize>,
    pub profile: Option<String>,
    pub weights: Option<PathBuf>,
    pub threads: Option<usize>,
    pub bands: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub dims: Option<[usize; 3]>,
    pub voxel_size: Option<f64>,
    pub origin: Option<[f64; 3]>,
    pub label_map: Option<PathBuf>,
    pub chunk: Option<[usize; 3]>,
    pub max_active_chunks: Option<usize>,
    pub scale: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| occrefine::Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        }.into())
    }
}

/// The resolved settings of a run, echoed next to its outputs.
#[derive(Debug, Default, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk: Option<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_active_chunks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
}

impl RunConfig {
    pub fn echo(&self, dir: Option<&Path>) -> Result<()> {
        let text = toml::to_string(self).context("serializing run config")?;
        println!("# effective configuration\n{text}");
        if let Some(d) = dir {
            std::fs::write(d.join("run_config.toml"), &text)?;
        }
        Ok(())
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    /// Voxels per frame along x, y, z [default: 256,256,32]
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Voxel edge length in meters [default: 0.2]
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Frame volume origin in the LiDAR frame [default: 0,-25.6,-2]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub origin: Option<Vec<f64>>,
    /// Raw-to-class label map (TOML) [default: SemanticKITTI]
    #[arg(long)]
    pub label_map: Option<PathBuf>,
}

/// Exactly three comma-separated values.
pub fn triple<T: Copy>(v: &[T], flag: &str) -> Result<[T; 3]> {
    match v {
        &[a, b, c] => Ok([a, b, c]),
        _ => bail!(occrefine::Error::Config(format!("--{flag} takes three comma-separated values"))),
    }
}

impl GridArgs {
    pub fn spec(&self, file: &FileConfig) -> Result<GridSpec> {
        let kitti = GridSpec::semantic_kitti();
        let dims = match &self.dims {
            Some(d) => triple(d, "dims")?,
            None => file.dims.unwrap_or(kitti.dims),
        };
        let v = self.voxel_size.or(file.voxel_size).unwrap_or(kitti.voxel_size[0]);
        let origin = match &self.origin {
            Some(o) => triple(o, "origin")?,
            None => file.origin.unwrap_or(kitti.origin),
        };
        Ok(GridSpec::new(dims, origin, [v; 3])?)
    }

    pub fn label_map(&self, file: &FileConfig) -> Result<LabelMap> {
        match self.label_map.as_ref().or(file.label_map.as_ref()) {
            Some(p) => Ok(LabelMap::load(p)?),
            None => Ok(LabelMap::semantic_kitti()),
        }
    }

    pub fn fill(&self, spec: &GridSpec, rc: &mut RunConfig) {
        rc.dims = spec.dims;
        rc.voxel_size = spec.voxel_size[0];
        rc.origin = spec.origin;
    }
}

/// Weight profile from a profile file or a mode name with default constants.
pub fn resolve_profile(
    mode: Option<&str>,
    weights: Option<&Path>,
    file: &FileConfig,
    calib: &FrameCalib,
    default_mode: &str,
) -> Result<WeightProfile> {
    if let Some(p) = weights.or(file.weights.as_deref()) {
        return Ok(WeightProfile::load(p, Some(calib))?);
    }
    let mode = mode.or(file.profile.as_deref()).unwrap_or(default_mode);
    Ok(match mode {
        "uniform" => WeightProfile::Uniform,
        "camera" => WeightProfile::Camera(CameraWeights::from_calib(calib)),
        "lidar" => WeightProfile::Lidar(LidarWeights::default()),
        other => bail!(occrefine::Error::Config(format!(
            "unknown weight profile '{other}' (expected uniform, camera or lidar)"
        ))),
    })
}
