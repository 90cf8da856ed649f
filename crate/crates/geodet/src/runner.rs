//! High-level runs used by the command-line tool and the acceptance suite:
//! train on a scene suite and evaluate on it, sweep one hyperparameter over
//! a value grid, and dump a stage-by-stage trace of one scene.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{DetectionsFile, GroundTruthFile, SceneDetections, SceneGroundTruth};
use crate::matrix::FeatureMatrix;
use crate::model::params::ModelParams;
use crate::model::pipeline::{detect, forward, ScenePrep};
use crate::model::train::{train_toy, TrainOptions, TrainReport};
use crate::types::{PointCloud, SceneAnnotation};
use crate::{eval, rng};

/// A scene ready for training or inference, tagged with its suite id.
pub struct PreparedScene {
    pub id: String,
    pub prep: ScenePrep,
    pub annotation: SceneAnnotation,
}

/// Cluster and weight every scene. The class-name list must agree across
/// scenes; it defines the model's class space.
pub fn prepare_scenes(
    scenes: Vec<(String, PointCloud, SceneAnnotation)>,
    config: &RunConfig,
) -> Result<(Vec<PreparedScene>, Vec<String>)> {
    if scenes.is_empty() {
        return Err(Error::validation("no scenes to prepare"));
    }
    let class_names = scenes[0].2.class_names.clone();
    let mut prepared = Vec::with_capacity(scenes.len());
    for (id, cloud, annotation) in scenes {
        if annotation.class_names != class_names {
            return Err(Error::validation(format!(
                "scene '{id}' declares a different class list"
            )));
        }
        let prep = ScenePrep::new(cloud, None, config.alpha, config.voxel_size)?;
        prepared.push(PreparedScene {
            id,
            prep,
            annotation,
        });
    }
    Ok((prepared, class_names))
}

/// Everything a full run produces.
pub struct RunOutput {
    pub params: ModelParams,
    pub train_report: TrainReport,
    pub detections: DetectionsFile,
    pub ground_truth: GroundTruthFile,
    pub eval_report: eval::EvalReport,
}

/// Train on the suite with the given config, then run detection on the
/// training scenes and score them. This is the training-set evaluation used
/// by the toy benchmarks and the hyperparameter sweeps.
pub fn train_and_eval(
    scenes: Vec<(String, PointCloud, SceneAnnotation)>,
    config: &RunConfig,
) -> Result<RunOutput> {
    config.validate()?;
    let (prepared, class_names) = prepare_scenes(scenes, config)?;
    let params = ModelParams::init(config.model_config(class_names.len()), config.seed)?;
    let options = TrainOptions {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        poly_power: config.poly_power,
        beta: config.beta,
    };
    let training_set: Vec<(ScenePrep, SceneAnnotation)> = prepared
        .iter()
        .map(|s| (s.prep.clone(), s.annotation.clone()))
        .collect();
    let (params, train_report) = train_toy(&training_set, params, &options)?;

    let mut det_scenes = Vec::with_capacity(prepared.len());
    let mut gt_scenes = Vec::with_capacity(prepared.len());
    for scene in &prepared {
        let result = detect(&params, &scene.prep)?;
        det_scenes.push(SceneDetections {
            scene_id: scene.id.clone(),
            detections: result.detections,
        });
        gt_scenes.push(SceneGroundTruth {
            scene_id: scene.id.clone(),
            boxes: scene.annotation.boxes.clone(),
        });
    }
    let detections = DetectionsFile { scenes: det_scenes };
    let ground_truth = GroundTruthFile {
        class_names,
        scenes: gt_scenes,
    };
    let eval_report = eval::compute_map(&detections, &ground_truth)?;
    Ok(RunOutput {
        params,
        train_report,
        detections,
        ground_truth,
        eval_report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            other => Err(Error::config(format!(
                "unknown sweep parameter '{other}' (alpha or beta)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub map25: Option<f64>,
    pub map50: Option<f64>,
    /// Present when this value failed; the sweep continues past failures.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("sweep serialization");
        out.push(b'\n');
        out
    }

    /// Fixed-width text table, one row per swept value.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:>10} {:>8} {:>8}\n", self.param, "mAP25", "mAP50"));
        for row in &self.rows {
            match &row.error {
                Some(err) => out.push_str(&format!("{:>10.2} error: {err}\n", row.value)),
                None => {
                    let fmt = |v: Option<f64>| match v {
                        Some(x) => format!("{x:.4}"),
                        None => "n/a".to_string(),
                    };
                    out.push_str(&format!(
                        "{:>10.2} {:>8} {:>8}\n",
                        row.value,
                        fmt(row.map25),
                        fmt(row.map50)
                    ));
                }
            }
        }
        out
    }
}

/// Train and evaluate once per value of the swept parameter. Rows for
/// invalid values carry an error message instead of aborting the sweep.
pub fn run_sweep(
    scenes: &[(String, PointCloud, SceneAnnotation)],
    base: &RunConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base.clone();
        match param {
            SweepParam::Alpha => config.alpha = value,
            SweepParam::Beta => config.beta = value,
        }
        let outcome = config
            .validate()
            .and_then(|_| train_and_eval(scenes.to_vec(), &config));
        match outcome {
            Ok(output) => rows.push(SweepRow {
                value,
                map25: output.eval_report.map25,
                map50: output.eval_report.map50,
                error: None,
            }),
            Err(err) => rows.push(SweepRow {
                value,
                map25: None,
                map50: None,
                error: Some(err.to_string()),
            }),
        }
    }
    Ok(SweepReport {
        param: param.name().to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub name: String,
    pub shape: Vec<usize>,
    pub stats: StageStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub stages: Vec<StageTrace>,
}

impl TraceReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("trace serialization");
        out.push(b'\n');
        out
    }
}

fn stats_of(values: &[f64]) -> StageStats {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    StageStats {
        min,
        max,
        mean: sum / values.len() as f64,
    }
}

fn matrix_stage(name: &str, m: &FeatureMatrix) -> StageTrace {
    StageTrace {
        name: name.to_string(),
        shape: vec![m.rows(), m.cols()],
        stats: stats_of(m.data()),
    }
}

fn vec_stage(name: &str, v: &[f64]) -> StageTrace {
    StageTrace {
        name: name.to_string(),
        shape: vec![v.len()],
        stats: stats_of(v),
    }
}

/// Run one scene through the pipeline and record, per stage, the tensor
/// shape and summary statistics. The stage list is fixed.
pub fn pipeline_trace(params: &ModelParams, scene: &ScenePrep) -> Result<TraceReport> {
    let pass = forward(params, scene)?;
    let mut stages = Vec::new();
    stages.push(vec_stage("centroid", &scene.geometry.centroid));
    stages.push(vec_stage("distances", &scene.geometry.distances));
    stages.push(vec_stage("normalized", &scene.geometry.normalized));
    stages.push(vec_stage("weights", &scene.geometry.weights));
    stages.push(matrix_stage("backbone", &pass.features));
    stages.push(matrix_stage("gated", &pass.gated));
    stages.push(matrix_stage("recalibrated", &pass.recalibrated));
    stages.push(matrix_stage("scatter_mean", &pass.mean_pooled));
    stages.push(matrix_stage("scatter_max", &pass.max_pooled));
    stages.push(matrix_stage("fused", &pass.fused));
    stages.push(matrix_stage("encoded", &pass.encoded));
    stages.push(matrix_stage("boxes", &pass.box_out));
    Ok(TraceReport { stages })
}

/// Derive a fresh stream from the run seed for auxiliary randomness, keeping
/// the single-seed contract.
pub fn derived_seed(config: &RunConfig, stream: u64) -> u64 {
    rng::derive_seed(config.seed, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneSpec};

    fn tiny_suite(n: usize) -> Vec<(String, PointCloud, SceneAnnotation)> {
        (0..n)
            .map(|i| {
                let spec = SceneSpec {
                    seed: 100 + i as u64,
                    points_per_object: 48,
                    clutter_points: 12,
                    objects_min: 1,
                    objects_max: 2,
                    ..SceneSpec::default()
                };
                let (cloud, ann) = generate_scene(&spec).unwrap();
                (format!("scene_{i:03}"), cloud, ann)
            })
            .collect()
    }

    fn quick_config() -> RunConfig {
        RunConfig {
            channels: 8,
            hidden: 12,
            encoder_layers: 1,
            epochs: 3,
            voxel_size: 0.5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn train_and_eval_produces_aligned_outputs() {
        let output = train_and_eval(tiny_suite(2), &quick_config()).unwrap();
        assert_eq!(output.detections.scenes.len(), 2);
        assert_eq!(output.ground_truth.scenes.len(), 2);
        assert_eq!(output.train_report.loss_trace.len(), 3);
        assert!(output.eval_report.map25.is_some());
    }

    #[test]
    fn degenerate_sweep_matches_plain_run() {
        let scenes = tiny_suite(2);
        let config = quick_config();
        let sweep = run_sweep(&scenes, &config, SweepParam::Alpha, &[2.0]).unwrap();
        assert_eq!(sweep.rows.len(), 1);
        let plain = train_and_eval(scenes, &config).unwrap();
        assert_eq!(sweep.rows[0].map25, plain.eval_report.map25);
        assert_eq!(sweep.rows[0].map50, plain.eval_report.map50);
        assert!(sweep.rows[0].error.is_none());
    }

    #[test]
    fn sweep_records_errors_and_continues() {
        let scenes = tiny_suite(1);
        let config = quick_config();
        let sweep = run_sweep(&scenes, &config, SweepParam::Alpha, &[-1.0, 2.0]).unwrap();
        assert!(sweep.rows[0].error.is_some());
        assert!(sweep.rows[1].error.is_none());
        let table = sweep.render_table();
        assert!(table.contains("alpha"));
    }

    #[test]
    fn trace_stage_list_is_fixed_and_shapes_are_consistent() {
        let scenes = tiny_suite(1);
        let config = quick_config();
        let (prepared, class_names) = prepare_scenes(scenes, &config).unwrap();
        let params =
            ModelParams::init(config.model_config(class_names.len()), config.seed).unwrap();
        let trace = pipeline_trace(&params, &prepared[0].prep).unwrap();
        let names: Vec<&str> = trace.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "centroid",
                "distances",
                "normalized",
                "weights",
                "backbone",
                "gated",
                "recalibrated",
                "scatter_mean",
                "scatter_max",
                "fused",
                "encoded",
                "boxes"
            ]
        );
        let n = prepared[0].prep.num_points();
        let m = prepared[0].prep.num_superpoints();
        let c = config.channels;
        assert_eq!(trace.stages[1].shape, vec![n]);
        assert_eq!(trace.stages[4].shape, vec![n, c]);
        assert_eq!(trace.stages[7].shape, vec![m, c]);
        assert_eq!(trace.stages[9].shape, vec![m, 2 * c]);
        assert_eq!(trace.stages[10].shape, vec![m, c]);
        assert_eq!(trace.stages[11].shape, vec![m, 6]);
        // geometry weight stats respect the decay range
        let weights = &trace.stages[3].stats;
        assert!(weights.max <= 1.0 + 1e-12);
        assert!(weights.min >= (-config.alpha).exp() - 1e-12);
    }
}
