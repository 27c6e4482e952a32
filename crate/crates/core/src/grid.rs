//! Dense semantic voxel grids and the geometry of their index space.
//!
//! Labels are stored x-major with z varying fastest, which is also the byte
//! order of SemanticKITTI voxel files.

use std::fmt;

use crate::error::{Error, Result};

/// Semantic class of a voxel. `0` is free space, `1..=num_classes` are
/// occupied classes and `255` marks a voxel excluded from evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(transparent)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const FREE: ClassId = ClassId(0);
    pub const INVALID: ClassId = ClassId(255);

    pub fn is_free(self) -> bool {
        self == Self::FREE
    }

    pub fn is_invalid(self) -> bool {
        self == Self::INVALID
    }

    pub fn is_occupied(self) -> bool {
        !self.is_free() && !self.is_invalid()
    }

    pub fn is_valid(self, num_classes: usize) -> bool {
        self.is_invalid() || (self.0 as usize) <= num_classes
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Extent, placement and resolution of a voxel grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub voxel_size: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if voxel_size.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "voxel size must be positive and finite, got {voxel_size:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid(format!("grid origin must be finite, got {origin:?}")));
        }
        Ok(Self {
            dims,
            origin,
            voxel_size,
        })
    }

    /// The SemanticKITTI SSC volume: 256x256x32 voxels of 0.2 m covering
    /// 0..51.2 m forward, -25.6..25.6 m lateral and -2..4.4 m height.
    pub fn semantic_kitti() -> Self {
        Self {
            dims: [256, 256, 32],
            origin: [0.0, -25.6, -2.0],
            voxel_size: [0.2, 0.2, 0.2],
        }
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn contains_index(&self, index: [usize; 3]) -> bool {
        index.iter().zip(&self.dims).all(|(&i, &d)| i < d)
    }

    pub fn index_to_linear(&self, index: [usize; 3]) -> Result<usize> {
        if !self.contains_index(index) {
            return Err(Error::OutOfBounds {
                index,
                dims: self.dims,
            });
        }
        Ok(self.linear_unchecked(index))
    }

    #[inline]
    pub(crate) fn linear_unchecked(&self, [x, y, z]: [usize; 3]) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn linear_to_index(&self, linear: usize) -> Result<[usize; 3]> {
        if linear >= self.num_voxels() {
            return Err(Error::invalid(format!(
                "linear offset {linear} out of range for {} voxels",
                self.num_voxels()
            )));
        }
        Ok(self.index_unchecked(linear))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, linear: usize) -> [usize; 3] {
        let z = linear % self.dims[2];
        let rest = linear / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], z]
    }

    pub fn voxel_center(&self, index: [usize; 3]) -> Result<[f64; 3]> {
        if !self.contains_index(index) {
            return Err(Error::OutOfBounds {
                index,
                dims: self.dims,
            });
        }
        Ok(self.center_unchecked(index))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, index: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (index[a] as f64 + 0.5) * self.voxel_size[a])
    }

    /// Quantizes a point into the half-open cell `[lo, hi)` containing it.
    /// Returns `None` for points outside the volume or with non-finite coordinates.
    #[inline]
    pub fn point_to_index(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size[a]).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Minimum and maximum corners of the volume in meters.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let max = std::array::from_fn(|a| self.origin[a] + self.dims[a] as f64 * self.voxel_size[a]);
        (self.origin, max)
    }

    /// The eight corners of the volume, used when bounding transformed frames.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (lo, hi) = self.bounds();
        std::array::from_fn(|i| {
            [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ]
        })
    }

    /// Spec of the sub-block starting at `start` with extent `dims`.
    pub fn sub_spec(&self, start: [usize; 3], dims: [usize; 3]) -> GridSpec {
        GridSpec {
            dims,
            origin: std::array::from_fn(|a| self.origin[a] + start[a] as f64 * self.voxel_size[a]),
            voxel_size: self.voxel_size,
        }
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::semantic_kitti()
    }
}

/// Dense semantic label volume for one frame (or one world map chunk).
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    labels: Vec<ClassId>,
    pub frame_id: u32,
}

impl VoxelGrid {
    /// All-free grid.
    pub fn empty(spec: GridSpec, frame_id: u32) -> Self {
        Self {
            spec,
            labels: vec![ClassId::FREE; spec.num_voxels()],
            frame_id,
        }
    }

    pub fn from_labels(
        spec: GridSpec,
        labels: Vec<ClassId>,
        frame_id: u32,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != spec.num_voxels() {
            return Err(Error::invalid(format!(
                "label count {} does not match grid volume {}",
                labels.len(),
                spec.num_voxels()
            )));
        }
        if let Some(bad) = labels.iter().find(|c| !c.is_valid(num_classes)) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..={num_classes} and not 255"
            )));
        }
        Ok(Self {
            spec,
            labels,
            frame_id,
        })
    }

    pub(crate) fn from_labels_unchecked(spec: GridSpec, labels: Vec<ClassId>, frame_id: u32) -> Self {
        debug_assert_eq!(labels.len(), spec.num_voxels());
        Self {
            spec,
            labels,
            frame_id,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<ClassId> {
        self.labels
    }

    pub fn get(&self, index: [usize; 3]) -> Result<ClassId> {
        Ok(self.labels[self.spec.index_to_linear(index)?])
    }

    pub fn set(&mut self, index: [usize; 3], class: ClassId) -> Result<()> {
        let i = self.spec.index_to_linear(index)?;
        self.labels[i] = class;
        Ok(())
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|c| c.is_occupied()).count()
    }

    /// Predicted grids must never carry the evaluation-only invalid label.
    pub fn validate_prediction(&self) -> Result<()> {
        match self.labels.iter().position(|c| c.is_invalid()) {
            Some(i) => Err(Error::invalid(format!(
                "predicted grid (frame {}) contains invalid label 255 at voxel {:?}",
                self.frame_id,
                self.spec.index_unchecked(i)
            ))),
            None => Ok(()),
        }
    }

    /// Sets every voxel whose mask bit is set to the invalid label.
    pub fn apply_invalid_mask(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.labels.len() {
            return Err(Error::invalid(format!(
                "mask length {} does not match grid volume {}",
                mask.len(),
                self.labels.len()
            )));
        }
        for (label, &m) in self.labels.iter_mut().zip(mask) {
            if m {
                *label = ClassId::INVALID;
            }
        }
        Ok(())
    }

    /// Copies the sub-block `[start, start + dims)` into a new grid.
    pub fn crop(&self, start: [usize; 3], dims: [usize; 3]) -> Result<VoxelGrid> {
        let end: [usize; 3] = std::array::from_fn(|a| start[a] + dims[a]);
        if dims.contains(&0) || end.iter().zip(&self.spec.dims).any(|(&e, &d)| e > d) {
            return Err(Error::invalid(format!(
                "crop {start:?}+{dims:?} exceeds grid dims {:?}",
                self.spec.dims
            )));
        }
        let sub = self.spec.sub_spec(start, dims);
        let mut labels = Vec::with_capacity(sub.num_voxels());
        for x in start[0]..end[0] {
            for y in start[1]..end[1] {
                let row = self.spec.linear_unchecked([x, y, start[2]]);
                labels.extend_from_slice(&self.labels[row..row + dims[2]]);
            }
        }
        Ok(VoxelGrid::from_labels_unchecked(sub, labels, self.frame_id))
    }
}
