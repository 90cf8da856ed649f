//! Spatial weighting of points by proximity to the scene centroid.
//!
//! Each point gets a scalar weight `w_i = exp(-alpha * d_norm_i)` where
//! `d_norm_i` is its Euclidean distance to the centroid, min-max normalized
//! over the scene. Points at the centroid weigh 1, the farthest point weighs
//! `exp(-alpha)`. All arithmetic is done in `f64` regardless of how the
//! cloud is stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PointCloud;

pub const DEFAULT_ALPHA: f64 = 2.0;

/// Centroid, raw and normalized distances, and the decay weights for one
/// scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryWeights {
    pub centroid: [f64; 3],
    pub distances: Vec<f64>,
    pub normalized: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha: f64,
}

impl GeometryWeights {
    /// Run the full centroid -> distance -> normalize -> decay chain.
    pub fn compute(points: &[[f64; 3]], alpha: f64) -> Result<Self> {
        let centroid = compute_centroid(points)?;
        let distances = compute_distances(points, centroid);
        let normalized = minmax_normalize(&distances);
        let weights = geometry_weights(&normalized, alpha)?;
        Ok(GeometryWeights {
            centroid,
            distances,
            normalized,
            weights,
            alpha,
        })
    }

    pub fn from_cloud(cloud: &PointCloud, alpha: f64) -> Result<Self> {
        Self::compute(&cloud.positions_f64(), alpha)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Componentwise arithmetic mean of the positions.
pub fn compute_centroid(points: &[[f64; 3]]) -> Result<[f64; 3]> {
    if points.is_empty() {
        return Err(Error::validation("cannot take centroid of an empty cloud"));
    }
    let mut sum = [0.0f64; 3];
    for p in points {
        for a in 0..3 {
            sum[a] += p[a];
        }
    }
    let n = points.len() as f64;
    Ok([sum[0] / n, sum[1] / n, sum[2] / n])
}

/// Euclidean distance from every point to the reference point.
pub fn compute_distances(points: &[[f64; 3]], centroid: [f64; 3]) -> Vec<f64> {
    points
        .iter()
        .map(|p| {
            let dx = p[0] - centroid[0];
            let dy = p[1] - centroid[1];
            let dz = p[2] - centroid[2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .collect()
}

/// Min-max scaling to [0, 1]. When all values are equal the output is all
/// zeros, which makes the downstream decay weights uniformly 1 (identity
/// reweighting).
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / span).collect()
}

/// Exponential decay `w_i = exp(-alpha * d_i)` over normalized distances.
pub fn geometry_weights(normalized: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::config(format!(
            "decay coefficient alpha must be positive and finite, got {alpha}"
        )));
    }
    Ok(normalized.iter().map(|d| (-alpha * d).exp()).collect())
}
