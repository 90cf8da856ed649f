//! Optimal one-to-one assignment between predictions and ground-truth boxes.
//!
//! The cost of pairing prediction `i` with ground truth `j` is
//! `-log p_i(class_j) + diou_loss(box_i, box_j)` (unit weights on both
//! terms). The assignment minimizing the total cost is found with the
//! Kuhn-Munkres algorithm using potentials and shortest augmenting paths,
//! O(n^2 m); the test suite checks it against exhaustive permutation
//! enumeration at small sizes.

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::model::boxes::diou_loss;
use crate::types::Box3D;

/// Minimum-cost assignment of every row to a distinct column. Requires
/// `rows <= cols`; returns `assigned[row] = col`.
fn assign_rows(cost: &FeatureMatrix) -> Vec<usize> {
    let n = cost.rows();
    let m = cost.cols();
    debug_assert!(n <= m);
    const INF: f64 = f64::INFINITY;

    // 1-based potentials; p[j] = row matched to column j (0 = none).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assigned = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assigned[p[j] - 1] = j - 1;
        }
    }
    assigned
}

/// Minimum-cost one-to-one assignment over an arbitrary rectangular cost
/// matrix. Matches `min(rows, cols)` pairs; returns `(row, col)` pairs
/// sorted by row.
pub fn min_cost_assignment(cost: &FeatureMatrix) -> Vec<(usize, usize)> {
    if cost.rows() == 0 || cost.cols() == 0 {
        return Vec::new();
    }
    let mut pairs = if cost.rows() <= cost.cols() {
        assign_rows(cost)
            .into_iter()
            .enumerate()
            .map(|(r, c)| (r, c))
            .collect::<Vec<_>>()
    } else {
        // transpose, assign columns-as-rows, swap back
        let mut t = FeatureMatrix::zeros(cost.cols(), cost.rows());
        for i in 0..cost.rows() {
            for j in 0..cost.cols() {
                t.set(j, i, cost.get(i, j));
            }
        }
        assign_rows(&t)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect::<Vec<_>>()
    };
    pairs.sort_unstable();
    pairs
}

/// Pairing cost matrix: `cost[i][j] = -log p_i(class_j) + diou(box_i, gt_j)`.
pub fn pairing_costs(
    class_probs: &FeatureMatrix,
    pred_boxes: &[Box3D],
    gt_boxes: &[Box3D],
) -> Result<FeatureMatrix> {
    if class_probs.rows() != pred_boxes.len() {
        return Err(Error::shape(format!(
            "{} probability rows for {} predicted boxes",
            class_probs.rows(),
            pred_boxes.len()
        )));
    }
    let mut cost = FeatureMatrix::zeros(pred_boxes.len(), gt_boxes.len());
    for (i, pred) in pred_boxes.iter().enumerate() {
        for (j, gt) in gt_boxes.iter().enumerate() {
            if gt.class_id >= class_probs.cols() {
                return Err(Error::shape(format!(
                    "ground-truth class {} outside probability table width {}",
                    gt.class_id,
                    class_probs.cols()
                )));
            }
            let p = class_probs.get(i, gt.class_id).max(f64::MIN_POSITIVE);
            cost.set(i, j, -p.ln() + diou_loss(pred, gt));
        }
    }
    Ok(cost)
}

/// Optimal prediction-to-ground-truth pairs for one scene. Every ground
/// truth is matched when there are at least as many predictions; unmatched
/// predictions are left to the no-object class by the loss. Pairs are
/// `(prediction index, ground-truth index)`.
pub fn match_predictions(
    class_probs: &FeatureMatrix,
    pred_boxes: &[Box3D],
    gt_boxes: &[Box3D],
) -> Result<Vec<(usize, usize)>> {
    if gt_boxes.is_empty() {
        return Ok(Vec::new());
    }
    let cost = pairing_costs(class_probs, pred_boxes, gt_boxes)?;
    Ok(min_cost_assignment(&cost))
}

/// Total cost of an assignment (used by tests and diagnostics).
pub fn assignment_cost(cost: &FeatureMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost.get(i, j)).sum()
}
