//! Semantic class taxonomies (names, dynamic/static split, display colors).

use crate::error::{Error, Result};
use crate::grid::ClassId;

const SEMANTIC_KITTI_NAMES: [&str; 19] = [
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

// RGB, same colors as the SemanticKITTI development kit.
const SEMANTIC_KITTI_COLORS: [[u8; 3]; 19] = [
    [100, 150, 245],
    [100, 230, 245],
    [30, 60, 150],
    [80, 30, 180],
    [0, 0, 255],
    [255, 30, 30],
    [255, 40, 200],
    [150, 30, 90],
    [255, 0, 255],
    [255, 150, 255],
    [75, 0, 75],
    [175, 0, 75],
    [255, 200, 0],
    [255, 120, 50],
    [0, 175, 0],
    [135, 60, 0],
    [150, 240, 80],
    [255, 240, 150],
    [255, 0, 0],
];

/// Named occupied classes `1..=num_classes()` with a dynamic-class subset.
#[derive(Clone, Debug, PartialEq)]
pub struct Taxonomy {
    names: Vec<String>,
    dynamic: Vec<bool>,
    colors: Vec<[u8; 3]>,
}

impl Taxonomy {
    /// The 19-class SemanticKITTI SSC taxonomy. Vehicles and people are dynamic.
    pub fn semantic_kitti() -> Self {
        Self {
            names: SEMANTIC_KITTI_NAMES.iter().map(|s| s.to_string()).collect(),
            dynamic: (1..=19).map(|c| c <= 8).collect(),
            colors: SEMANTIC_KITTI_COLORS.to_vec(),
        }
    }

    /// A custom taxonomy, e.g. the 18-class SSCBench-KITTI360 set.
    pub fn custom(names: Vec<String>, dynamic: &[ClassId], colors: Option<Vec<[u8; 3]>>) -> Result<Self> {
        if names.is_empty() || names.len() > 254 {
            return Err(Error::Config(format!(
                "taxonomy must have 1..=254 classes, got {}",
                names.len()
            )));
        }
        let n = names.len();
        let mut dyn_flags = vec![false; n];
        for c in dynamic {
            if !c.is_occupied() || c.index() > n {
                return Err(Error::Config(format!("dynamic class {c} not in 1..={n}")));
            }
            dyn_flags[c.index() - 1] = true;
        }
        let colors = match colors {
            Some(c) if c.len() == n => c,
            Some(c) => {
                return Err(Error::Config(format!("{} colors for {n} classes", c.len())));
            }
            None => (0..n)
                .map(|i| {
                    let h = (i as u32).wrapping_mul(2654435761);
                    [(h >> 8) as u8, (h >> 16) as u8, (h >> 24) as u8]
                })
                .collect(),
        };
        Ok(Self {
            names,
            dynamic: dyn_flags,
            colors,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, class: ClassId) -> Option<&str> {
        match class {
            ClassId::FREE => Some("free"),
            c if c.is_occupied() && c.index() <= self.names.len() => Some(&self.names[c.index() - 1]),
            _ => None,
        }
    }

    pub fn color(&self, class: ClassId) -> [u8; 3] {
        if class.is_occupied() && class.index() <= self.colors.len() {
            self.colors[class.index() - 1]
        } else {
            [0, 0, 0]
        }
    }

    pub fn is_dynamic(&self, class: ClassId) -> bool {
        class.is_occupied() && class.index() <= self.dynamic.len() && self.dynamic[class.index() - 1]
    }

    pub fn occupied_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        (1..=self.names.len()).map(|c| ClassId(c as u8))
    }

    pub fn static_classes(&self) -> Vec<ClassId> {
        self.occupied_classes().filter(|&c| !self.is_dynamic(c)).collect()
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::semantic_kitti()
    }
}
