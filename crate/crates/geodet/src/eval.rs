//! Detection metrics: per-class average precision at IoU 0.25 and 0.5, and
//! their mean over classes.
//!
//! Protocol: detections are pooled across scenes and sorted by descending
//! score (ties keep input order). Walking down the list, each detection is
//! greedily matched to the highest-IoU unmatched ground-truth box of the
//! same class in the same scene; it is a true positive iff that IoU clears
//! the threshold, and each ground truth can only be claimed once. AP is the
//! area under the precision-recall curve with all-point interpolation
//! (precision at each recall level is the maximum precision at any recall at
//! least that large). Classes without ground truth have no defined AP and
//! are left out of the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DetectionsFile, GroundTruthFile};
use crate::model::boxes::iou_3d;
use crate::types::Box3D;

/// One pooled detection: which scene it belongs to, its box, and its score.
#[derive(Debug, Clone, Copy)]
pub struct PooledDetection {
    pub scene: usize,
    pub class_id: usize,
    pub bbox: Box3D,
    pub score: f64,
}

/// Per-class average precision at both thresholds. `None` when the class
/// has no ground-truth instances (AP undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub ap25: Option<f64>,
    pub ap50: Option<f64>,
    pub gt_count: usize,
    pub detection_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    /// Mean AP over classes with at least one ground-truth instance;
    /// `None` when there is no ground truth at all.
    pub map25: Option<f64>,
    pub map50: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serialization");
        out.push(b'\n');
        out
    }
}

/// Average precision for one class at one IoU threshold.
///
/// `detections` may contain any classes; only those with `class_id` matching
/// are considered. `ground_truth[scene]` lists that scene's boxes. Returns
/// `None` when the class has no ground-truth instances.
pub fn compute_ap(
    detections: &[PooledDetection],
    ground_truth: &[Vec<Box3D>],
    class_id: usize,
    iou_threshold: f64,
) -> Option<f64> {
    let gt_total: usize = ground_truth
        .iter()
        .map(|scene| scene.iter().filter(|b| b.class_id == class_id).count())
        .sum();
    if gt_total == 0 {
        return None;
    }

    // Stable sort by descending score keeps ties in input order.
    let mut ordered: Vec<&PooledDetection> = detections
        .iter()
        .filter(|d| d.class_id == class_id)
        .collect();
    ordered.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));

    // claimed[scene][index within that scene's class-filtered gt list]
    let mut claimed: Vec<Vec<bool>> = ground_truth
        .iter()
        .map(|scene| vec![false; scene.iter().filter(|b| b.class_id == class_id).count()])
        .collect();
    let class_gt: Vec<Vec<&Box3D>> = ground_truth
        .iter()
        .map(|scene| scene.iter().filter(|b| b.class_id == class_id).collect())
        .collect();

    let mut tp_flags = Vec::with_capacity(ordered.len());
    for det in &ordered {
        let candidates = &class_gt[det.scene];
        let mut best: Option<(usize, f64)> = None;
        for (k, gt) in candidates.iter().enumerate() {
            if claimed[det.scene][k] {
                continue;
            }
            let iou = iou_3d(&det.bbox, gt);
            let better = match best {
                None => true,
                Some((_, best_iou)) => iou > best_iou,
            };
            if better {
                best = Some((k, iou));
            }
        }
        match best {
            Some((k, iou)) if iou >= iou_threshold => {
                claimed[det.scene][k] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }

    Some(ap_from_tp_flags(&tp_flags, gt_total))
}

/// Area under the precision-recall curve with all-point interpolation, given
/// the true/false flag of each ranked detection.
fn ap_from_tp_flags(tp_flags: &[bool], gt_total: usize) -> f64 {
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (k + 1) as f64);
        recalls.push(tp as f64 / gt_total as f64);
    }
    // monotone precision envelope from the right
    let mut envelope = precisions.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..envelope.len() {
        if recalls[k] > prev_recall {
            ap += (recalls[k] - prev_recall) * envelope[k];
            prev_recall = recalls[k];
        }
    }
    ap
}

/// Pool the detections file and evaluate every class against the ground
/// truth. Scene ids present in the detections must exist in the ground
/// truth; missing detection entries for a ground-truth scene simply count as
/// misses.
pub fn compute_map(detections: &DetectionsFile, ground_truth: &GroundTruthFile) -> Result<EvalReport> {
    let mut scene_index = std::collections::HashMap::new();
    for (idx, scene) in ground_truth.scenes.iter().enumerate() {
        if scene_index.insert(scene.scene_id.as_str(), idx).is_some() {
            return Err(Error::validation(format!(
                "duplicate scene id '{}' in ground truth",
                scene.scene_id
            )));
        }
    }
    let mut pooled = Vec::new();
    for scene in &detections.scenes {
        let idx = *scene_index.get(scene.scene_id.as_str()).ok_or_else(|| {
            Error::validation(format!(
                "detections reference unknown scene id '{}'",
                scene.scene_id
            ))
        })?;
        for d in &scene.detections {
            if d.class_id >= ground_truth.class_names.len() {
                return Err(Error::validation(format!(
                    "detection class {} outside the {}-class space",
                    d.class_id,
                    ground_truth.class_names.len()
                )));
            }
            pooled.push(PooledDetection {
                scene: idx,
                class_id: d.class_id,
                bbox: d.box3d(),
                score: d.score,
            });
        }
    }
    let gt_boxes: Vec<Vec<Box3D>> = ground_truth.scenes.iter().map(|s| s.boxes.clone()).collect();
    Ok(evaluate_pooled(
        &pooled,
        &gt_boxes,
        &ground_truth.class_names,
    ))
}

/// Core evaluation over already-pooled detections.
pub fn evaluate_pooled(
    detections: &[PooledDetection],
    ground_truth: &[Vec<Box3D>],
    class_names: &[String],
) -> EvalReport {
    let mut per_class = Vec::new();
    let mut sum25 = 0.0;
    let mut sum50 = 0.0;
    let mut classes_with_gt = 0usize;
    for class_id in 0..class_names.len() {
        let gt_count: usize = ground_truth
            .iter()
            .map(|scene| scene.iter().filter(|b| b.class_id == class_id).count())
            .sum();
        let detection_count = detections.iter().filter(|d| d.class_id == class_id).count();
        if gt_count == 0 && detection_count == 0 {
            continue;
        }
        let ap25 = compute_ap(detections, ground_truth, class_id, 0.25);
        let ap50 = compute_ap(detections, ground_truth, class_id, 0.50);
        if let (Some(a25), Some(a50)) = (ap25, ap50) {
            sum25 += a25;
            sum50 += a50;
            classes_with_gt += 1;
        }
        per_class.push(ClassReport {
            class_id,
            name: class_names[class_id].clone(),
            ap25,
            ap50,
            gt_count,
            detection_count,
        });
    }
    let (map25, map50) = if classes_with_gt > 0 {
        (
            Some(sum25 / classes_with_gt as f64),
            Some(sum50 / classes_with_gt as f64),
        )
    } else {
        (None, None)
    };
    EvalReport {
        per_class,
        map25,
        map50,
    }
}
