//! Superpoint clustering and per-cluster feature pooling.
//!
//! Points are grouped into superpoints (here: deterministic voxel-grid
//! cells, or labels imported from file). Per-point features are recalibrated
//! by the geometry weights, pooled per cluster by mean and by max, and the
//! two pooled tables are concatenated into the hybrid per-superpoint
//! representation. Mean accumulation always runs in ascending point order so
//! results are bit-stable.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::GeometryWeights;
use crate::matrix::FeatureMatrix;
use crate::types::{PointCloud, SuperpointLabels};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.25;

/// Per-superpoint features (width `2C`: mean-pooled block then max-pooled
/// block) plus the mean position of each cluster, used later to anchor box
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridRepresentation {
    pub features: FeatureMatrix,
    pub centroids: Vec<[f64; 3]>,
}

/// Group points by voxel cell. Two points share a cluster iff they share
/// `(floor(x/v), floor(y/v), floor(z/v))`. Ids are densified in order of
/// first occurrence, so the result is deterministic for a fixed cloud.
pub fn cluster_voxel_grid(cloud: &PointCloud, voxel_size: f64) -> Result<SuperpointLabels> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::config(format!(
            "voxel size must be positive and finite, got {voxel_size}"
        )));
    }
    let mut keys: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut ids = Vec::with_capacity(cloud.len());
    for p in &cloud.positions {
        let key = (
            ((p[0] as f64) / voxel_size).floor() as i64,
            ((p[1] as f64) / voxel_size).floor() as i64,
            ((p[2] as f64) / voxel_size).floor() as i64,
        );
        let next = keys.len();
        let id = *keys.entry(key).or_insert(next);
        ids.push(id);
    }
    SuperpointLabels::new(ids, keys.len())
}

/// Mean member position per cluster.
pub fn superpoint_centroids(labels: &SuperpointLabels, cloud: &PointCloud) -> Result<Vec<[f64; 3]>> {
    if labels.len() != cloud.len() {
        return Err(Error::shape(format!(
            "labels cover {} points, cloud has {}",
            labels.len(),
            cloud.len()
        )));
    }
    let mut sums = vec![[0.0f64; 3]; labels.count()];
    let counts = labels.cluster_sizes();
    for (p, &id) in cloud.positions.iter().zip(labels.ids()) {
        for a in 0..3 {
            sums[id][a] += p[a] as f64;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64])
        .collect())
}

/// Scale each point's feature row by its scalar geometry weight.
pub fn recalibrate(weights: &GeometryWeights, gated: &FeatureMatrix) -> Result<FeatureMatrix> {
    if weights.len() != gated.rows() {
        return Err(Error::shape(format!(
            "{} weights for {} feature rows",
            weights.len(),
            gated.rows()
        )));
    }
    let mut out = gated.clone();
    for (i, &w) in weights.weights.iter().enumerate() {
        for v in out.row_mut(i) {
            *v *= w;
        }
    }
    Ok(out)
}

/// Per-cluster arithmetic mean of member rows.
pub fn scatter_mean(labels: &SuperpointLabels, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if labels.len() != features.rows() {
        return Err(Error::shape(format!(
            "labels cover {} points, features have {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let cols = features.cols();
    let mut out = FeatureMatrix::zeros(labels.count(), cols);
    for (i, &id) in labels.ids().iter().enumerate() {
        let src = features.row(i);
        let dst = out.row_mut(id);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    for (id, &n) in labels.cluster_sizes().iter().enumerate() {
        let inv = 1.0 / n as f64;
        for v in out.row_mut(id) {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Per-cluster componentwise maximum of member rows. Also returns, per
/// output entry, the index of the point that supplied the maximum (ties
/// kept at the lowest point index), which the backward pass uses to route
/// gradients.
pub fn scatter_max(
    labels: &SuperpointLabels,
    features: &FeatureMatrix,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if labels.len() != features.rows() {
        return Err(Error::shape(format!(
            "labels cover {} points, features have {} rows",
            labels.len(),
            features.rows()
        )));
    }
    let cols = features.cols();
    let m = labels.count();
    let mut out = FeatureMatrix::zeros(m, cols);
    let mut argmax = vec![usize::MAX; m * cols];
    for (i, &id) in labels.ids().iter().enumerate() {
        let src = features.row(i);
        for c in 0..cols {
            let slot = id * cols + c;
            if argmax[slot] == usize::MAX || src[c] > out.get(id, c) {
                out.set(id, c, src[c]);
                argmax[slot] = i;
            }
        }
    }
    Ok((out, argmax))
}

/// Concatenate the mean-pooled block (first) and the max-pooled block
/// (second) along channels.
pub fn fuse(global_feat: &FeatureMatrix, local_feat: &FeatureMatrix) -> Result<FeatureMatrix> {
    if global_feat.shape() != local_feat.shape() {
        return Err(Error::shape(format!(
            "fuse {:?} with {:?}",
            global_feat.shape(),
            local_feat.shape()
        )));
    }
    FeatureMatrix::concat_cols(global_feat, local_feat)
}

/// Build the hybrid per-superpoint representation from per-point inputs:
/// recalibrate, pool, concatenate, and collect cluster centroids.
pub fn build_hybrid(
    cloud: &PointCloud,
    labels: &SuperpointLabels,
    weights: &GeometryWeights,
    gated: &FeatureMatrix,
) -> Result<HybridRepresentation> {
    let recalibrated = recalibrate(weights, gated)?;
    let global_feat = scatter_mean(labels, &recalibrated)?;
    let (local_feat, _) = scatter_max(labels, gated)?;
    let features = fuse(&global_feat, &local_feat)?;
    let centroids = superpoint_centroids(labels, cloud)?;
    Ok(HybridRepresentation { features, centroids })
}

/// Backward pass of the pooled/fused block.
///
/// `upstream` is the gradient on the fused `M x 2C` table. Returns per-point
/// gradients `(grad_recalibrated, grad_gated_max)`: the first flows back
/// through the mean pool into the recalibrated features, the second through
/// the max pool directly into the gated features. The column split mirrors
/// the fuse order (mean block first).
pub fn aggregate_backward(
    labels: &SuperpointLabels,
    argmax: &[usize],
    upstream: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if upstream.rows() != labels.count() || upstream.cols() % 2 != 0 {
        return Err(Error::shape(format!(
            "upstream {:?} does not match {} clusters with even width",
            upstream.shape(),
            labels.count()
        )));
    }
    let c = upstream.cols() / 2;
    if argmax.len() != labels.count() * c {
        return Err(Error::shape(format!(
            "argmax table has {} entries, expected {}",
            argmax.len(),
            labels.count() * c
        )));
    }
    let n = labels.len();
    let sizes = labels.cluster_sizes();
    let mut grad_recalibrated = FeatureMatrix::zeros(n, c);
    let mut grad_gated_max = FeatureMatrix::zeros(n, c);

    // Mean path: each member receives upstream / |cluster|.
    for (i, &id) in labels.ids().iter().enumerate() {
        let inv = 1.0 / sizes[id] as f64;
        let up = upstream.row(id);
        let dst = grad_recalibrated.row_mut(i);
        for k in 0..c {
            dst[k] = up[k] * inv;
        }
    }
    // Max path: only the recorded argmax point receives gradient.
    for id in 0..labels.count() {
        let up = upstream.row(id);
        for k in 0..c {
            let point = argmax[id * c + k];
            if point >= n {
                return Err(Error::shape(format!(
                    "argmax entry {point} out of range for {n} points"
                )));
            }
            grad_gated_max.set(point, k, grad_gated_max.get(point, k) + up[c + k]);
        }
    }
    Ok((grad_recalibrated, grad_gated_max))
}
