//! Geometric IoU and semantic mIoU with invalid-voxel masking and
//! distance-banded evaluation.

use std::ops::AddAssign;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ClassId, GridSpec, VoxelGrid};

/// Joint counts over `{free} ∪ occupied classes`: rows are ground truth,
/// columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    pub excluded: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        let n = num_classes + 1;
        Self {
            num_classes,
            counts: vec![0; n * n],
            excluded: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        let n = self.num_classes + 1;
        self.counts[c * n..(c + 1) * n].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        let n = self.num_classes + 1;
        (0..n).map(|r| self.counts[r * n + c]).sum()
    }

    fn record(&mut self, gt: ClassId, pred: ClassId) {
        let n = self.num_classes + 1;
        self.counts[gt.index() * n + pred.index()] += 1;
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.num_classes, rhs.num_classes, "confusion matrices differ in class count");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
        self.excluded += rhs.excluded;
    }
}

fn check_pair(pred: &VoxelGrid, gt: &VoxelGrid, num_classes: usize) -> Result<()> {
    if pred.spec() != gt.spec() {
        return Err(Error::invalid(format!(
            "prediction spec {:?} differs from ground truth spec {:?}",
            pred.spec(),
            gt.spec()
        )));
    }
    if let Some(c) = pred.labels().iter().find(|c| c.is_invalid() || c.index() > num_classes) {
        return Err(Error::invalid(format!("prediction contains label {c}")));
    }
    if let Some(c) = gt.labels().iter().find(|c| !c.is_valid(num_classes)) {
        return Err(Error::invalid(format!("ground truth contains label {c}")));
    }
    Ok(())
}

/// Counts joint (gt, pred) labels. With `mask_invalid`, ground-truth 255 voxels
/// are excluded; without it they are rejected.
pub fn accumulate_confusion(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    num_classes: usize,
    mask_invalid: bool,
) -> Result<ConfusionMatrix> {
    check_pair(pred, gt, num_classes)?;
    if !mask_invalid && gt.labels().iter().any(|c| c.is_invalid()) {
        return Err(Error::invalid(
            "ground truth contains invalid voxels but masking is disabled",
        ));
    }
    const CHUNK: usize = 1 << 16;
    let cm = pred
        .labels()
        .par_chunks(CHUNK)
        .zip(gt.labels().par_chunks(CHUNK))
        .map(|(p, g)| {
            let mut cm = ConfusionMatrix::new(num_classes);
            for (&pc, &gc) in p.iter().zip(g) {
                if gc.is_invalid() {
                    cm.excluded += 1;
                } else {
                    cm.record(gc, pc);
                }
            }
            cm
        })
        .reduce(
            || ConfusionMatrix::new(num_classes),
            |mut a, b| {
                a += &b;
                a
            },
        );
    Ok(cm)
}

/// Occupied-vs-free IoU in percent; `None` when nothing is occupied in either.
pub fn iou(cm: &ConfusionMatrix) -> Option<f64> {
    let free_row = cm.row_sum(0);
    let free_col = cm.col_sum(0);
    let total = cm.total();
    let free_both = cm.get(0, 0);
    let gt_occ = total - free_row;
    let pred_occ = total - free_col;
    // occupied in both = total - free in either
    let tp = total - (free_row + free_col - free_both);
    let fp = pred_occ - tp;
    let fn_ = gt_occ - tp;
    let denom = tp + fp + fn_;
    (denom > 0).then(|| tp as f64 / denom as f64 * 100.0)
}

/// How classes absent from both prediction and ground truth enter the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AbsentClassPolicy {
    /// Count as IoU 0 (benchmark server convention).
    #[default]
    Zero,
    /// Leave out of the mean.
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    /// Per occupied class `1..=C`; `None` marks an absent class.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

pub fn miou(cm: &ConfusionMatrix, policy: AbsentClassPolicy) -> MiouReport {
    let per_class: Vec<Option<f64>> = (1..=cm.num_classes)
        .map(|c| {
            let tp = cm.get(c, c);
            let denom = cm.row_sum(c) + cm.col_sum(c) - tp;
            (denom > 0).then(|| tp as f64 / denom as f64 * 100.0)
        })
        .collect();
    let values: Vec<f64> = match policy {
        AbsentClassPolicy::Zero => per_class.iter().map(|v| v.unwrap_or(0.0)).collect(),
        AbsentClassPolicy::Skip => per_class.iter().flatten().copied().collect(),
    };
    let miou = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    MiouReport { per_class, miou }
}

pub const DEFAULT_BANDS: [f64; 3] = [12.8, 25.6, 51.2];

#[derive(Clone, Debug, PartialEq)]
pub struct BandResult {
    pub range: f64,
    pub dims: [usize; 3],
    pub iou: Option<f64>,
    pub miou: MiouReport,
}

/// Voxel index range along one axis whose centers fall in `[lo, hi]`.
fn axis_range(spec: &GridSpec, axis: usize, lo: f64, hi: f64) -> (usize, usize) {
    let o = spec.origin[axis];
    let d = spec.voxel_size[axis];
    let tol = 1e-9 * d;
    let start = ((lo - o) / d - 0.5 - tol).ceil().max(0.0) as usize;
    let end = (((hi - o) / d - 0.5 + tol).floor() + 1.0).max(0.0) as usize;
    (start, end.min(spec.dims[axis]))
}

/// Crops the band `x ∈ [0, d]`, `y ∈ [-d/2, d/2]` at full height.
pub fn band_crop(grid: &VoxelGrid, range: f64) -> Result<VoxelGrid> {
    let spec = grid.spec();
    let (lo, hi) = spec.bounds();
    let eps = 1e-9;
    if !(range > 0.0) || lo[0] > eps || range > hi[0] + eps || -range / 2.0 < lo[1] - eps || range / 2.0 > hi[1] + eps {
        return Err(Error::invalid(format!(
            "band {range} m exceeds grid extent x [{}, {}], y [{}, {}]",
            lo[0], hi[0], lo[1], hi[1]
        )));
    }
    let (x0, x1) = axis_range(spec, 0, 0.0, range);
    let (y0, y1) = axis_range(spec, 1, -range / 2.0, range / 2.0);
    grid.crop([x0, y0, 0], [x1 - x0, y1 - y0, spec.dims[2]])
}

pub fn banded_eval(
    pred: &VoxelGrid,
    gt: &VoxelGrid,
    bands: &[f64],
    num_classes: usize,
    policy: AbsentClassPolicy,
) -> Result<Vec<BandResult>> {
    check_pair(pred, gt, num_classes)?;
    bands
        .iter()
        .map(|&range| {
            let p = band_crop(pred, range)?;
            let g = band_crop(gt, range)?;
            let cm = accumulate_confusion(&p, &g, num_classes, true)?;
            Ok(BandResult {
                range,
                dims: p.spec().dims,
                iou: iou(&cm),
                miou: miou(&cm, policy),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    fn grid(spec: GridSpec, labels: Vec<u8>) -> VoxelGrid {
        VoxelGrid::from_labels(spec, labels.into_iter().map(ClassId).collect(), 0, 19).unwrap()
    }

    #[test]
    fn perfect_and_disjoint() {
        let spec = GridSpec::new([2, 2, 2], [0.0; 3], [1.0; 3]).unwrap();
        let g = grid(spec, vec![0, 1, 2, 3, 0, 9, 9, 19]);
        let cm = accumulate_confusion(&g, &g, 19, true).unwrap();
        for r in 0..20 {
            for c in 0..20 {
                if r != c {
                    assert_eq!(cm.get(r, c), 0);
                }
            }
        }
        assert_eq!(iou(&cm), Some(100.0));

        let free = VoxelGrid::empty(spec, 0);
        let ones = grid(spec, vec![1; 8]);
        let cm = accumulate_confusion(&free, &ones, 19, true).unwrap();
        assert_eq!(cm.get(1, 0), 8);
        assert_eq!(iou(&cm), Some(0.0));
        assert_eq!(iou(&accumulate_confusion(&free, &free, 19, true).unwrap()), None);
    }

    #[test]
    fn iou_from_counts() {
        // TP=50, FP=25, FN=25
        let spec = GridSpec::new([1, 1, 110], [0.0; 3], [1.0; 3]).unwrap();
        let mut p = vec![0u8; 110];
        let mut g = vec![0u8; 110];
        p[..75].fill(1);
        g[..50].fill(2);
        g[75..100].fill(2);
        let cm = accumulate_confusion(&grid(spec, p), &grid(spec, g), 19, true).unwrap();
        assert_eq!(iou(&cm), Some(50.0));
    }

    #[test]
    fn miou_conventions() {
        let spec = GridSpec::new([1, 2, 2], [0.0; 3], [1.0; 3]).unwrap();
        let g = grid(spec, vec![0, 4, 4, 0]);
        let cm = accumulate_confusion(&g, &g, 19, true).unwrap();
        let zero = miou(&cm, AbsentClassPolicy::Zero);
        assert!((zero.miou - 100.0 / 19.0).abs() < 1e-12);
        assert_eq!(zero.per_class[3], Some(100.0));
        assert_eq!(zero.per_class[0], None);
        assert_eq!(miou(&cm, AbsentClassPolicy::Skip).miou, 100.0);

        let all = grid(GridSpec::new([1, 1, 19], [0.0; 3], [1.0; 3]).unwrap(), (1..=19).collect());
        let cm = accumulate_confusion(&all, &all, 19, true).unwrap();
        assert_eq!(miou(&cm, AbsentClassPolicy::Zero).miou, 100.0);
    }

    #[test]
    fn masking() {
        let spec = GridSpec::new([1, 1, 3], [0.0; 3], [1.0; 3]).unwrap();
        let p = grid(spec, vec![1, 2, 3]);
        let g = grid(spec, vec![1, 255, 3]);
        let cm = accumulate_confusion(&p, &g, 19, true).unwrap();
        assert_eq!(cm.excluded, 1);
        assert_eq!(cm.total() + cm.excluded, 3);
        assert!(accumulate_confusion(&p, &g, 19, false).is_err());
        assert!(accumulate_confusion(&g, &p, 19, true).is_err());
    }

    #[test]
    fn spec_mismatch() {
        let a = VoxelGrid::empty(GridSpec::new([1, 1, 3], [0.0; 3], [1.0; 3]).unwrap(), 0);
        let b = VoxelGrid::empty(GridSpec::new([1, 3, 1], [0.0; 3], [1.0; 3]).unwrap(), 0);
        assert!(accumulate_confusion(&a, &b, 19, true).is_err());
    }

    #[test]
    fn bands_on_default_spec() {
        let spec = GridSpec::semantic_kitti();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u8> = (0..spec.num_voxels())
            .map(|_| if rng.gen_bool(0.2) { rng.gen_range(1..=19) } else { 0 })
            .collect();
        let g = grid(spec, labels);
        let mut p = g.clone();
        p.set([3, 100, 4], ClassId(5)).unwrap();
        p.set([200, 10, 4], ClassId(0)).unwrap();

        let bands = banded_eval(&p, &g, &DEFAULT_BANDS, 19, AbsentClassPolicy::Zero).unwrap();
        assert_eq!(bands[0].dims, [64, 64, 32]);
        assert_eq!(bands[1].dims, [128, 128, 32]);
        assert_eq!(bands[2].dims, [256, 256, 32]);
        let full = accumulate_confusion(&p, &g, 19, true).unwrap();
        assert_eq!(bands[2].iou, iou(&full));
        assert_eq!(bands[2].miou, miou(&full, AbsentClassPolicy::Zero));

        for b in banded_eval(&g, &g, &DEFAULT_BANDS, 19, AbsentClassPolicy::Skip).unwrap() {
            assert_eq!(b.iou, Some(100.0));
            assert_eq!(b.miou.miou, 100.0);
        }
        assert!(banded_eval(&g, &g, &[60.0], 19, AbsentClassPolicy::Zero).is_err());
    }

    #[test]
    fn additive_over_partitions() {
        let spec = GridSpec::new([4, 4, 4], [0.0; 3], [1.0; 3]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut rand_grid = |inv: bool| {
            let labels = (0..64)
                .map(|_| {
                    if inv && rng.gen_bool(0.1) {
                        255
                    } else {
                        rng.gen_range(0..=19)
                    }
                })
                .collect();
            grid(spec, labels)
        };
        let p = rand_grid(false);
        let g = rand_grid(true);
        let whole = accumulate_confusion(&p, &g, 19, true).unwrap();
        let mut parts = ConfusionMatrix::new(19);
        for x in 0..4 {
            let cp = p.crop([x, 0, 0], [1, 4, 4]).unwrap();
            let cg = g.crop([x, 0, 0], [1, 4, 4]).unwrap();
            parts += &accumulate_confusion(&cp, &cg, 19, true).unwrap();
        }
        assert_eq!(parts, whole);
        let r = miou(&whole, AbsentClassPolicy::Zero);
        let max = r.per_class.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        assert!(r.miou <= max + 1e-12);
        assert!(r.per_class.iter().flatten().all(|&v| (0.0..=100.0).contains(&v)));
    }
}
