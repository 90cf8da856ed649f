//! End-to-end scene processing: per-point features, gating, geometric
//! recalibration, superpoint pooling, encoding, box/class prediction, the
//! matched detection loss, and the full analytic backward pass.

use crate::aggregation::{
    aggregate_backward, cluster_voxel_grid, recalibrate, scatter_max, scatter_mean,
};
use crate::error::{Error, Result};
use crate::gating::{gate_backward, gate_features};
use crate::geometry::GeometryWeights;
use crate::matrix::FeatureMatrix;
use crate::model::boxes::diou_loss_grad;
use crate::model::encoder::{encoder_backward, encoder_forward, softmax_rows, EncoderCache};
use crate::model::linear::MlpCache;
use crate::model::matching::match_predictions;
use crate::model::params::ModelParams;
use crate::types::{Box3D, Detection, DetectionResult, PointCloud, SceneAnnotation, SuperpointLabels};

/// Everything about a scene that does not depend on model parameters:
/// superpoint labels, geometry weights, cluster centroids, and the raw
/// per-point input table (x, y, z, r, g, b).
#[derive(Debug, Clone)]
pub struct ScenePrep {
    pub cloud: PointCloud,
    pub labels: SuperpointLabels,
    pub geometry: GeometryWeights,
    pub centroids: Vec<[f64; 3]>,
    pub input: FeatureMatrix,
}

impl ScenePrep {
    /// Cluster (or adopt the provided labels), compute geometry weights and
    /// centroids. `alpha` is the decay coefficient, `voxel_size` the cluster
    /// cell edge.
    pub fn new(
        cloud: PointCloud,
        labels: Option<SuperpointLabels>,
        alpha: f64,
        voxel_size: f64,
    ) -> Result<Self> {
        cloud.validate()?;
        let labels = match labels {
            Some(l) => {
                if l.len() != cloud.len() {
                    return Err(Error::shape(format!(
                        "labels cover {} points, cloud has {}",
                        l.len(),
                        cloud.len()
                    )));
                }
                l
            }
            None => cluster_voxel_grid(&cloud, voxel_size)?,
        };
        let geometry = GeometryWeights::from_cloud(&cloud, alpha)?;
        let centroids = crate::aggregation::superpoint_centroids(&labels, &cloud)?;
        let n = cloud.len();
        let mut input = FeatureMatrix::zeros(n, 6);
        for i in 0..n {
            let p = cloud.positions[i];
            let c = cloud.colors[i];
            let row = input.row_mut(i);
            row[0] = p[0] as f64;
            row[1] = p[1] as f64;
            row[2] = p[2] as f64;
            row[3] = c[0] as f64;
            row[4] = c[1] as f64;
            row[5] = c[2] as f64;
        }
        Ok(ScenePrep {
            cloud,
            labels,
            geometry,
            centroids,
            input,
        })
    }

    pub fn num_points(&self) -> usize {
        self.cloud.len()
    }

    pub fn num_superpoints(&self) -> usize {
        self.labels.count()
    }
}

/// All intermediates of one forward pass, kept for the backward pass and
/// for stage-by-stage inspection.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub backbone_cache: MlpCache,
    /// Per-point features from the backbone MLP.
    pub features: FeatureMatrix,
    /// After channel gating.
    pub gated: FeatureMatrix,
    /// After geometry recalibration.
    pub recalibrated: FeatureMatrix,
    /// Mean-pooled per superpoint.
    pub mean_pooled: FeatureMatrix,
    /// Max-pooled per superpoint.
    pub max_pooled: FeatureMatrix,
    pub argmax: Vec<usize>,
    /// Concatenated pooled features, width 2C.
    pub fused: FeatureMatrix,
    pub encoder_cache: EncoderCache,
    pub encoded: FeatureMatrix,
    pub box_cache: MlpCache,
    /// Raw box head output: 3 center offsets then 3 log sizes.
    pub box_out: FeatureMatrix,
    pub class_cache: MlpCache,
    pub logits: FeatureMatrix,
    /// Row-wise softmax of the logits over K+1 classes.
    pub probs: FeatureMatrix,
    /// Decoded boxes, one per superpoint; class is the argmax real class.
    pub boxes: Vec<Box3D>,
}

pub fn forward(params: &ModelParams, scene: &ScenePrep) -> Result<ForwardPass> {
    let (features, backbone_cache) = params.backbone.forward(&scene.input)?;
    let gated = gate_features(&params.gating, &features)?;
    let recalibrated = recalibrate(&scene.geometry, &gated)?;
    let mean_pooled = scatter_mean(&scene.labels, &recalibrated)?;
    let (max_pooled, argmax) = scatter_max(&scene.labels, &gated)?;
    let fused = crate::aggregation::fuse(&mean_pooled, &max_pooled)?;
    let (encoded, encoder_cache) = encoder_forward(&params.projection, &params.blocks, &fused)?;
    let (box_out, box_cache) = params.box_head.forward(&encoded)?;
    let (logits, class_cache) = params.class_head.forward(&encoded)?;
    let probs = softmax_rows(&logits);
    let boxes = decode_boxes(&box_out, &probs, &scene.centroids, params.config.num_classes)?;
    Ok(ForwardPass {
        backbone_cache,
        features,
        gated,
        recalibrated,
        mean_pooled,
        max_pooled,
        argmax,
        fused,
        encoder_cache,
        encoded,
        box_out,
        class_cache,
        box_cache,
        logits,
        probs,
        boxes,
    })
}

/// Decode raw head output into boxes anchored at the superpoint centroids:
/// center = centroid + offset, size = exp(log size). Sizes are positive for
/// any finite head output.
fn decode_boxes(
    box_out: &FeatureMatrix,
    probs: &FeatureMatrix,
    centroids: &[[f64; 3]],
    num_classes: usize,
) -> Result<Vec<Box3D>> {
    if box_out.rows() != centroids.len() {
        return Err(Error::shape(format!(
            "{} box rows for {} centroids",
            box_out.rows(),
            centroids.len()
        )));
    }
    let mut boxes = Vec::with_capacity(centroids.len());
    for m in 0..centroids.len() {
        let row = box_out.row(m);
        let center = [
            centroids[m][0] + row[0],
            centroids[m][1] + row[1],
            centroids[m][2] + row[2],
        ];
        let size = [row[3].exp(), row[4].exp(), row[5].exp()];
        let class_id = argmax_real_class(probs.row(m), num_classes);
        boxes.push(Box3D::new(center, size, class_id));
    }
    Ok(boxes)
}

fn argmax_real_class(prob_row: &[f64], num_classes: usize) -> usize {
    let mut best = 0;
    for k in 1..num_classes {
        if prob_row[k] > prob_row[best] {
            best = k;
        }
    }
    best
}

/// Loss components for one scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// `beta * cls + reg`.
    pub total: f64,
    /// Mean cross-entropy over all predictions (matched ones target their
    /// ground-truth class, the rest the no-object class).
    pub cls: f64,
    /// Mean box loss over matched pairs; zero when nothing is matched.
    pub reg: f64,
    pub matched: usize,
}

/// Matched pairs plus per-prediction class targets for one scene.
pub struct MatchOutcome {
    pub pairs: Vec<(usize, usize)>,
    pub targets: Vec<usize>,
}

pub fn match_scene(
    pass: &ForwardPass,
    annotation: &SceneAnnotation,
    num_classes: usize,
) -> Result<MatchOutcome> {
    let pairs = match_predictions(&pass.probs, &pass.boxes, &annotation.boxes)?;
    let mut targets = vec![num_classes; pass.boxes.len()]; // no-object by default
    for &(pred, gt) in &pairs {
        targets[pred] = annotation.boxes[gt].class_id;
    }
    Ok(MatchOutcome { pairs, targets })
}

fn loss_from_pass(
    pass: &ForwardPass,
    outcome: &MatchOutcome,
    annotation: &SceneAnnotation,
    beta: f64,
) -> LossBreakdown {
    let m = pass.boxes.len() as f64;
    let mut cls = 0.0;
    for (i, &target) in outcome.targets.iter().enumerate() {
        cls -= pass.probs.get(i, target).max(f64::MIN_POSITIVE).ln();
    }
    cls /= m;
    let mut reg = 0.0;
    if !outcome.pairs.is_empty() {
        for &(pred, gt) in &outcome.pairs {
            reg += crate::model::boxes::diou_loss(&pass.boxes[pred], &annotation.boxes[gt]);
        }
        reg /= outcome.pairs.len() as f64;
    }
    LossBreakdown {
        total: beta * cls + reg,
        cls,
        reg,
        matched: outcome.pairs.len(),
    }
}

/// Forward plus loss, no gradients. The assignment is recomputed from the
/// current predictions, so this is the exact scalar function the gradient
/// suite differentiates.
pub fn loss_only(
    params: &ModelParams,
    scene: &ScenePrep,
    annotation: &SceneAnnotation,
    beta: f64,
) -> Result<LossBreakdown> {
    let pass = forward(params, scene)?;
    let outcome = match_scene(&pass, annotation, params.config.num_classes)?;
    Ok(loss_from_pass(&pass, &outcome, annotation, beta))
}

/// Forward, match, loss, and the full backward pass. Returns the loss
/// breakdown and a parameter-shaped gradient accumulator. Geometry weights
/// are functions of the input cloud, not of parameters, so no gradient
/// flows into them.
pub fn loss_and_grads(
    params: &ModelParams,
    scene: &ScenePrep,
    annotation: &SceneAnnotation,
    beta: f64,
) -> Result<(LossBreakdown, ModelParams)> {
    let pass = forward(params, scene)?;
    let outcome = match_scene(&pass, annotation, params.config.num_classes)?;
    let breakdown = loss_from_pass(&pass, &outcome, annotation, beta);

    let m = pass.boxes.len();
    let k1 = params.config.num_classes + 1;
    let mut grads = params.zeros_like();

    // Classification: d cls / d logits = (softmax - onehot) / M, times beta.
    let mut grad_logits = FeatureMatrix::zeros(m, k1);
    let scale_cls = beta / m as f64;
    for i in 0..m {
        let p_row = pass.probs.row(i);
        let g_row = grad_logits.row_mut(i);
        for k in 0..k1 {
            g_row[k] = scale_cls * p_row[k];
        }
        g_row[outcome.targets[i]] -= scale_cls;
    }

    // Regression: DIoU gradient on decoded boxes, mean over matched pairs;
    // chain through center = centroid + offset, size = exp(log size).
    let mut grad_box_out = FeatureMatrix::zeros(m, 6);
    if !outcome.pairs.is_empty() {
        let scale_reg = 1.0 / outcome.pairs.len() as f64;
        for &(pred, gt) in &outcome.pairs {
            let (_, d_center, d_size) =
                diou_loss_grad(&pass.boxes[pred], &annotation.boxes[gt]);
            let row = grad_box_out.row_mut(pred);
            for axis in 0..3 {
                row[axis] += scale_reg * d_center[axis];
                row[3 + axis] += scale_reg * d_size[axis] * pass.boxes[pred].size[axis];
            }
        }
    }

    // Heads share the encoded queries.
    let mut grad_encoded =
        params
            .box_head
            .backward(&pass.box_cache, &grad_box_out, &mut grads.box_head)?;
    grad_encoded.add_assign(&params.class_head.backward(
        &pass.class_cache,
        &grad_logits,
        &mut grads.class_head,
    )?)?;

    // Encoder stack down to the fused features.
    let grad_fused = encoder_backward(
        &params.projection,
        &params.blocks,
        &pass.encoder_cache,
        &grad_encoded,
        &mut grads.projection,
        &mut grads.blocks,
    )?;

    // Pooling: mean path lands on the recalibrated features, max path on the
    // gated features.
    let (grad_recalibrated, grad_gated_max) =
        aggregate_backward(&scene.labels, &pass.argmax, &grad_fused)?;

    // Recalibration was a per-point scalar multiply.
    let mut grad_gated = grad_gated_max;
    for i in 0..scene.num_points() {
        let w = scene.geometry.weights[i];
        let src = grad_recalibrated.row(i);
        let dst = grad_gated.row_mut(i);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s * w;
        }
    }

    let (grad_raw, grad_features) = gate_backward(&params.gating, &pass.features, &grad_gated)?;
    grads.gating.raw_weights = grad_raw;

    params
        .backbone
        .backward(&pass.backbone_cache, &grad_features, &mut grads.backbone)?;

    Ok((breakdown, grads))
}

/// Run the detector on a prepared scene. The score of each detection is the
/// largest real-class probability; the no-object probability only lowers the
/// ranking of background queries implicitly.
pub fn detect(params: &ModelParams, scene: &ScenePrep) -> Result<DetectionResult> {
    let pass = forward(params, scene)?;
    let k = params.config.num_classes;
    let mut detections = Vec::with_capacity(pass.boxes.len());
    for (m, b) in pass.boxes.iter().enumerate() {
        let prob_row = pass.probs.row(m);
        let score = prob_row[..k].iter().cloned().fold(0.0f64, f64::max);
        detections.push(Detection {
            center: b.center,
            size: b.size,
            class_id: b.class_id,
            score,
        });
    }
    DetectionResult::new(detections)
}

/// Name of the first stage whose output contains a non-finite value, in
/// pipeline order. Used to build the training-abort diagnostic.
pub fn first_non_finite_stage(pass: &ForwardPass) -> Option<&'static str> {
    let stages: [(&'static str, &FeatureMatrix); 7] = [
        ("backbone", &pass.features),
        ("gated", &pass.gated),
        ("recalibrated", &pass.recalibrated),
        ("fused", &pass.fused),
        ("encoded", &pass.encoded),
        ("boxes", &pass.box_out),
        ("class_logits", &pass.logits),
    ];
    for (name, tensor) in stages {
        if !tensor.is_finite() {
            return Some(name);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::rng::SplitMix64;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            channels: 4,
            hidden: 5,
            encoder_layers: 1,
            num_classes: 2,
            alpha: 2.0,
            voxel_size: 0.5,
        }
    }

    fn random_scene(seed: u64, n: usize) -> ScenePrep {
        let mut rng = SplitMix64::new(seed);
        let positions: Vec<[f32; 3]> = (0..n)
            .map(|_| {
                [
                    rng.range_f64(0.0, 3.0) as f32,
                    rng.range_f64(0.0, 3.0) as f32,
                    rng.range_f64(0.0, 1.5) as f32,
                ]
            })
            .collect();
        let colors: Vec<[f32; 3]> = (0..n)
            .map(|_| {
                [
                    rng.next_f64() as f32,
                    rng.next_f64() as f32,
                    rng.next_f64() as f32,
                ]
            })
            .collect();
        let cloud = PointCloud::new(positions, colors).unwrap();
        ScenePrep::new(cloud, None, 2.0, 0.5).unwrap()
    }

    fn annotation_for(scene: &ScenePrep, seed: u64, boxes: usize) -> SceneAnnotation {
        let mut rng = SplitMix64::new(seed);
        let boxes = (0..boxes)
            .map(|_| {
                Box3D::new(
                    [
                        rng.range_f64(0.5, 2.5),
                        rng.range_f64(0.5, 2.5),
                        rng.range_f64(0.3, 1.2),
                    ],
                    [
                        rng.range_f64(0.4, 1.0),
                        rng.range_f64(0.4, 1.0),
                        rng.range_f64(0.4, 1.0),
                    ],
                    rng.below(2),
                )
            })
            .collect();
        let _ = scene;
        SceneAnnotation {
            class_names: vec!["class_0".into(), "class_1".into()],
            boxes,
        }
    }

    #[test]
    fn zero_box_output_decodes_to_centroid_anchored_unit_boxes() {
        let scene = random_scene(1, 24);
        let mut params = ModelParams::init(tiny_config(), 5).unwrap();
        // zero the box head so offsets and log sizes are exactly zero
        params.box_head.l1.w.scale(0.0);
        params.box_head.l1.b.iter_mut().for_each(|b| *b = 0.0);
        params.box_head.l2.w.scale(0.0);
        params.box_head.l2.b.iter_mut().for_each(|b| *b = 0.0);
        let pass = forward(&params, &scene).unwrap();
        for (m, b) in pass.boxes.iter().enumerate() {
            for axis in 0..3 {
                assert!((b.center[axis] - scene.centroids[m][axis]).abs() < 1e-12);
                assert!((b.size[axis] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sizes_positive_and_probs_normalized() {
        let scene = random_scene(2, 40);
        let params = ModelParams::init(tiny_config(), 9).unwrap();
        let pass = forward(&params, &scene).unwrap();
        for b in &pass.boxes {
            assert!(b.size.iter().all(|&s| s > 0.0));
        }
        for m in 0..pass.probs.rows() {
            let sum: f64 = pass.probs.row(m).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_points_share_feature_rows() {
        let cloud = PointCloud::new(
            vec![[1.0, 1.0, 0.5], [1.0, 1.0, 0.5], [2.0, 2.0, 1.0]],
            vec![[0.3, 0.3, 0.3]; 3],
        )
        .unwrap();
        let scene = ScenePrep::new(cloud, None, 2.0, 0.5).unwrap();
        let params = ModelParams::init(tiny_config(), 3).unwrap();
        let pass = forward(&params, &scene).unwrap();
        assert_eq!(pass.features.row(0), pass.features.row(1));
    }

    #[test]
    fn zero_backbone_weights_give_bias_only_features() {
        let scene = random_scene(3, 10);
        let mut params = ModelParams::init(tiny_config(), 5).unwrap();
        params.backbone.l1.w.scale(0.0);
        params.backbone.l2.w.scale(0.0);
        let pass = forward(&params, &scene).unwrap();
        // every row equals the output bias (biases are zero-initialized here)
        for i in 0..pass.features.rows() {
            for (v, &b) in pass.features.row(i).iter().zip(&params.backbone.l2.b) {
                assert_eq!(*v, b);
            }
        }
    }

    #[test]
    fn perfect_predictions_drive_loss_toward_zero() {
        // craft a scene with one gt box, then overwrite the forward outputs
        // indirectly by checking loss_from_pass on a synthetic pass is not
        // needed; instead check beta=0 isolates the regression term
        let scene = random_scene(4, 30);
        let ann = annotation_for(&scene, 8, 2);
        let params = ModelParams::init(tiny_config(), 11).unwrap();
        let full = loss_only(&params, &scene, &ann, 0.5).unwrap();
        let reg_only = loss_only(&params, &scene, &ann, 0.0).unwrap();
        assert!((reg_only.total - reg_only.reg).abs() < 1e-15);
        assert!((full.total - (0.5 * full.cls + full.reg)).abs() < 1e-12);
        assert_eq!(full.matched, 2);
    }

    #[test]
    fn empty_annotation_gives_zero_regression() {
        let scene = random_scene(5, 20);
        let ann = SceneAnnotation {
            class_names: vec!["class_0".into(), "class_1".into()],
            boxes: vec![],
        };
        let params = ModelParams::init(tiny_config(), 13).unwrap();
        let breakdown = loss_only(&params, &scene, &ann, 0.5).unwrap();
        assert_eq!(breakdown.reg, 0.0);
        assert_eq!(breakdown.matched, 0);
        assert!(breakdown.cls > 0.0);
    }

    #[test]
    fn detections_are_sorted_with_scores_in_range() {
        let scene = random_scene(6, 50);
        let params = ModelParams::init(tiny_config(), 17).unwrap();
        let result = detect(&params, &scene).unwrap();
        assert_eq!(result.detections.len(), scene.num_superpoints());
        for w in result.detections.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for d in &result.detections {
            assert!((0.0..=1.0).contains(&d.score));
        }
    }

    /// Full-pipeline gradient check on a small scene: every parameter of
    /// every group against central finite differences.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let scene = random_scene(7, 20);
        let ann = annotation_for(&scene, 21, 2);
        let params = ModelParams::init(tiny_config(), 23).unwrap();
        let beta = 0.5;

        let (_, grads) = loss_and_grads(&params, &scene, &ann, beta).unwrap();
        let grad_flat = grads.flatten();
        let theta = params.flatten();
        let h = 1e-4;
        let mut worst: (f64, usize) = (0.0, 0);
        for idx in 0..theta.len() {
            let mut plus = params.clone();
            let mut flat = theta.clone();
            flat[idx] += h;
            plus.assign_from_flat(&flat);
            let mut minus = params.clone();
            flat[idx] -= 2.0 * h;
            minus.assign_from_flat(&flat);
            let lp = loss_only(&plus, &scene, &ann, beta).unwrap().total;
            let lm = loss_only(&minus, &scene, &ann, beta).unwrap().total;
            let fd = (lp - lm) / (2.0 * h);
            let an = grad_flat[idx];
            let err = (fd - an).abs();
            let rel = err / fd.abs().max(an.abs()).max(1e-7 / 1e-4);
            if rel > worst.0 {
                worst = (rel, idx);
            }
            assert!(
                err <= 1e-7 + 1e-4 * fd.abs().max(an.abs()),
                "param {idx}: fd={fd} analytic={an}"
            );
        }
        println!("worst relative gradient error {:.3e} at flat index {}", worst.0, worst.1);
    }
}
