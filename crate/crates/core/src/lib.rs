//! Offboard refinement of per-frame semantic occupancy predictions.
//!
//! The pipeline registers temporal windows of voxel grids with SE(3) poses,
//! fuses them by sensor-weighted voting, builds chunked city-scale maps and
//! evaluates the result with IoU/mIoU. The [`kernel`] module holds a small
//! reference implementation of the temporal attention block and the training
//! losses used by the learned refinement stage.

pub mod citymap;
pub mod classes;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod kitti;
pub mod metrics;
pub mod synth;

pub use classes::Taxonomy;
pub use error::{Error, Result};
pub use fusion::{fuse_window, VoteAccumulator, WeightProfile};
pub use geometry::{FrameCalib, Pose};
pub use grid::{ClassId, GridSpec, VoxelGrid};
