//! Shared domain types: point clouds, boxes, annotations, superpoint labels
//! and detection results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A colored point cloud. Positions are stored in `f32` (the on-disk
/// precision); geometric computations promote to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// (x, y, z) per point, meters.
    pub positions: Vec<[f32; 3]>,
    /// (r, g, b) per point, each in [0, 1].
    pub colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>, colors: Vec<[f32; 3]>) -> Result<Self> {
        let cloud = PointCloud { positions, colors };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions_f64(&self) -> Vec<[f64; 3]> {
        self.positions
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::validation("point cloud has no points"));
        }
        if self.positions.len() != self.colors.len() {
            return Err(Error::shape(format!(
                "positions ({}) and colors ({}) differ in length",
                self.positions.len(),
                self.colors.len()
            )));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "positions".to_string(),
                    index: i,
                });
            }
        }
        for (i, c) in self.colors.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "colors".to_string(),
                    index: i,
                });
            }
            if c.iter().any(|v| *v < 0.0 || *v > 1.0) {
                return Err(Error::validation(format!(
                    "color at index {i} outside [0, 1]: {c:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Axis-aligned 3D box with a class id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub class_id: usize,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], class_id: usize) -> Self {
        Box3D {
            center,
            size,
            class_id,
        }
    }

    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.center[0] - self.size[0] / 2.0,
            self.center[1] - self.size[1] / 2.0,
            self.center[2] - self.size[2] / 2.0,
        ]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.center[0] + self.size[0] / 2.0,
            self.center[1] + self.size[1] / 2.0,
            self.center[2] + self.size[2] / 2.0,
        ]
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// From min/max corners; corners must be ordered per axis.
    pub fn from_corners(min: [f64; 3], max: [f64; 3], class_id: usize) -> Self {
        Box3D {
            center: [
                (min[0] + max[0]) / 2.0,
                (min[1] + max[1]) / 2.0,
                (min[2] + max[2]) / 2.0,
            ],
            size: [max[0] - min[0], max[1] - min[1], max[2] - min[2]],
            class_id,
        }
    }

    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        if !self.center.iter().all(|v| v.is_finite()) || !self.size.iter().all(|v| v.is_finite()) {
            return Err(Error::validation(format!("box has non-finite fields: {self:?}")));
        }
        if self.size.iter().any(|s| *s <= 0.0) {
            return Err(Error::validation(format!(
                "box size must be strictly positive per axis, got {:?}",
                self.size
            )));
        }
        if let Some(k) = num_classes {
            if self.class_id >= k {
                return Err(Error::validation(format!(
                    "class_id {} out of range for {} classes",
                    self.class_id, k
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth boxes for one scene plus the class-id space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub class_names: Vec<String>,
    pub boxes: Vec<Box3D>,
}

impl SceneAnnotation {
    pub fn validate(&self) -> Result<()> {
        for b in &self.boxes {
            b.validate(Some(self.class_names.len()))?;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Per-point cluster ids in a dense `[0, M)` space where every cluster owns
/// at least one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpointLabels {
    ids: Vec<usize>,
    count: usize,
}

impl SuperpointLabels {
    /// Build from arbitrary nonnegative ids, remapping them to a dense
    /// `[0, M)` space in order of first occurrence.
    pub fn from_raw(raw: &[usize]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::validation("superpoint labels are empty"));
        }
        let mut remap: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        let mut ids = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = remap.len();
            let dense = *remap.entry(r).or_insert(next);
            ids.push(dense);
        }
        let count = remap.len();
        Ok(SuperpointLabels { ids, count })
    }

    /// Build from ids that are already dense; validates the surjection
    /// invariant (every id in `[0, count)` occurs at least once).
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::validation("superpoint labels are empty"));
        }
        let mut seen = vec![false; count];
        for (i, &id) in ids.iter().enumerate() {
            if id >= count {
                return Err(Error::validation(format!(
                    "superpoint id {id} at point {i} out of range [0, {count})"
                )));
            }
            seen[id] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::validation(format!(
                "superpoint id {missing} owns no points"
            )));
        }
        Ok(SuperpointLabels { ids, count })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Number of clusters M.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Number of points N.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Member count per cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count];
        for &id in &self.ids {
            sizes[id] += 1;
        }
        sizes
    }
}

/// One scored detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub class_id: usize,
    pub score: f64,
}

impl Detection {
    pub fn box3d(&self) -> Box3D {
        Box3D::new(self.center, self.size, self.class_id)
    }
}

/// Scored, classed boxes for one scene, sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detections: Vec<Detection>,
}

impl DetectionResult {
    /// Sorts by descending score (stable, so ties keep input order) and
    /// validates score range.
    pub fn new(mut detections: Vec<Detection>) -> Result<Self> {
        for (i, d) in detections.iter().enumerate() {
            if !d.score.is_finite() || d.score < 0.0 || d.score > 1.0 {
                return Err(Error::validation(format!(
                    "detection {} has score {} outside [0, 1]",
                    i, d.score
                )));
            }
        }
        detections.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
        Ok(DetectionResult { detections })
    }
}
