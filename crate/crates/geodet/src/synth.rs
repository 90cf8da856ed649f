//! Deterministic synthetic indoor scenes: a few axis-aligned boxes with
//! surface-sampled points plus uniform clutter, all driven by the portable
//! generator in [`crate::rng`], so a seed fully determines every byte of
//! output on every platform.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    parse_annotations, parse_ply, write_annotations, write_ground_truth, write_ply,
    GroundTruthFile, SceneGroundTruth,
};
use crate::rng::SplitMix64;
use crate::types::{Box3D, PointCloud, SceneAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Room extents in meters; the room spans `[0, extent]` per axis.
    pub room: [f64; 3],
    /// Inclusive range for the number of objects per scene.
    pub objects_min: usize,
    pub objects_max: usize,
    /// Object edge lengths are drawn uniformly from this range, per axis.
    pub size_min: f64,
    pub size_max: f64,
    pub points_per_object: usize,
    /// Uniformly scattered background points.
    pub clutter_points: usize,
    pub num_classes: usize,
    /// Sample object classes without replacement within a scene, so no class
    /// appears twice. Requires `num_classes >= objects_max`.
    pub distinct_classes: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            room: [5.0, 5.0, 2.5],
            objects_min: 2,
            objects_max: 5,
            size_min: 0.5,
            size_max: 1.1,
            points_per_object: 160,
            clutter_points: 48,
            num_classes: 6,
            distinct_classes: true,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.room.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::config(format!("room extents must be positive: {:?}", self.room)));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(Error::config(format!(
                "object count range [{}, {}] is invalid",
                self.objects_min, self.objects_max
            )));
        }
        if !(self.size_min > 0.0) || self.size_min > self.size_max {
            return Err(Error::config(format!(
                "object size range [{}, {}] is invalid",
                self.size_min, self.size_max
            )));
        }
        let smallest_extent = self.room.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.size_max >= smallest_extent {
            return Err(Error::config(format!(
                "objects up to {} m do not fit a room with smallest extent {} m",
                self.size_max, smallest_extent
            )));
        }
        if self.points_per_object < 8 {
            return Err(Error::config("at least 8 points per object are required"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("at least one class is required"));
        }
        if self.distinct_classes && self.num_classes < self.objects_max {
            return Err(Error::config(format!(
                "distinct classes need num_classes ({}) >= objects_max ({})",
                self.num_classes, self.objects_max
            )));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|k| format!("class_{k}")).collect()
    }
}

/// Fixed, well-separated color per class; clutter gets gray.
fn class_color(class_id: usize, rng: &mut SplitMix64) -> [f32; 3] {
    const PALETTE: [[f32; 3]; 8] = [
        [0.85, 0.15, 0.15],
        [0.15, 0.75, 0.20],
        [0.15, 0.25, 0.85],
        [0.85, 0.75, 0.15],
        [0.75, 0.15, 0.80],
        [0.15, 0.80, 0.80],
        [0.90, 0.50, 0.15],
        [0.55, 0.35, 0.20],
    ];
    let base = PALETTE[class_id % PALETTE.len()];
    let mut jitter = |v: f32| (v + rng.range_f64(-0.05, 0.05) as f32).clamp(0.0, 1.0);
    [jitter(base[0]), jitter(base[1]), jitter(base[2])]
}

/// Sample one point on the surface of the box spanning `[min, max]`. Faces
/// are chosen proportionally to their area.
fn sample_surface_point(min: [f64; 3], max: [f64; 3], rng: &mut SplitMix64) -> [f64; 3] {
    let size = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
    let areas = [
        size[1] * size[2], // x faces
        size[0] * size[2], // y faces
        size[0] * size[1], // z faces
    ];
    let total = 2.0 * (areas[0] + areas[1] + areas[2]);
    let mut pick = rng.next_f64() * total;
    let mut axis = 0;
    let mut high = false;
    for (k, &area) in areas.iter().enumerate() {
        if pick < area {
            axis = k;
            high = false;
            break;
        }
        pick -= area;
        if pick < area {
            axis = k;
            high = true;
            break;
        }
        pick -= area;
    }
    let mut p = [
        rng.range_f64(min[0], max[0]),
        rng.range_f64(min[1], max[1]),
        rng.range_f64(min[2], max[2]),
    ];
    p[axis] = if high { max[axis] } else { min[axis] };
    p
}

/// Generate one labeled scene. Ground-truth boxes are the tight bounds of
/// each object's sampled points, so labels are exactly consistent with the
/// geometry that ends up in the cloud.
pub fn generate_scene(spec: &SceneSpec) -> Result<(PointCloud, SceneAnnotation)> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let object_count = rng.range_usize(spec.objects_min, spec.objects_max);

    let mut positions: Vec<[f32; 3]> = Vec::new();
    let mut colors: Vec<[f32; 3]> = Vec::new();
    let mut boxes = Vec::with_capacity(object_count);

    // seeded Fisher-Yates over the class ids, consumed in order when classes
    // must be distinct within the scene
    let mut class_pool: Vec<usize> = (0..spec.num_classes).collect();
    for i in (1..class_pool.len()).rev() {
        let j = rng.below(i + 1);
        class_pool.swap(i, j);
    }

    for object_idx in 0..object_count {
        let class_id = if spec.distinct_classes {
            class_pool[object_idx]
        } else {
            rng.below(spec.num_classes)
        };
        let size = [
            rng.range_f64(spec.size_min, spec.size_max),
            rng.range_f64(spec.size_min, spec.size_max),
            rng.range_f64(spec.size_min, spec.size_max),
        ];
        let mut min = [0.0f64; 3];
        let mut max = [0.0f64; 3];
        for axis in 0..3 {
            let lo = rng.range_f64(0.0, spec.room[axis] - size[axis]);
            min[axis] = lo;
            max[axis] = lo + size[axis];
        }
        let first = positions.len();
        for _ in 0..spec.points_per_object {
            let p = sample_surface_point(min, max, &mut rng);
            positions.push([p[0] as f32, p[1] as f32, p[2] as f32]);
            colors.push(class_color(class_id, &mut rng));
        }
        // tight bounds of the points actually sampled (in stored precision)
        let mut tight_min = [f64::INFINITY; 3];
        let mut tight_max = [f64::NEG_INFINITY; 3];
        for p in &positions[first..] {
            for axis in 0..3 {
                tight_min[axis] = tight_min[axis].min(p[axis] as f64);
                tight_max[axis] = tight_max[axis].max(p[axis] as f64);
            }
        }
        boxes.push(Box3D::from_corners(tight_min, tight_max, class_id));
    }

    for _ in 0..spec.clutter_points {
        let p = [
            rng.range_f64(0.0, spec.room[0]),
            rng.range_f64(0.0, spec.room[1]),
            rng.range_f64(0.0, spec.room[2]),
        ];
        positions.push([p[0] as f32, p[1] as f32, p[2] as f32]);
        let gray = rng.range_f64(0.3, 0.6) as f32;
        colors.push([gray, gray, gray]);
    }

    let cloud = PointCloud::new(positions, colors)?;
    let annotation = SceneAnnotation {
        class_names: spec.class_names(),
        boxes,
    };
    annotation.validate()?;
    Ok((cloud, annotation))
}

/// One entry per generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub seed: u64,
    pub ply: String,
    pub annotations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub seed: u64,
    pub scenes: Vec<SceneEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "gt.json";

/// Generate `n_scenes` scenes into `dir` (PLY + annotation JSON per scene,
/// plus a manifest and an aggregate ground-truth file). Scene `i` uses seed
/// `seed + i`.
pub fn generate_suite(
    dir: &Path,
    n_scenes: usize,
    spec: &SceneSpec,
    seed: u64,
) -> Result<SuiteManifest> {
    if n_scenes == 0 {
        return Err(Error::config("suite needs at least one scene"));
    }
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(n_scenes);
    let mut gt_scenes = Vec::with_capacity(n_scenes);
    let mut class_names = None;
    for i in 0..n_scenes {
        let scene_seed = seed.wrapping_add(i as u64);
        let scene_spec = SceneSpec {
            seed: scene_seed,
            ..spec.clone()
        };
        let (cloud, annotation) = generate_scene(&scene_spec)?;
        let id = format!("scene_{i:03}");
        let ply_name = format!("{id}.ply");
        let ann_name = format!("{id}.json");
        std::fs::write(dir.join(&ply_name), write_ply(&cloud, false))?;
        std::fs::write(dir.join(&ann_name), write_annotations(&annotation))?;
        gt_scenes.push(SceneGroundTruth {
            scene_id: id.clone(),
            boxes: annotation.boxes.clone(),
        });
        class_names.get_or_insert(annotation.class_names);
        entries.push(SceneEntry {
            id,
            seed: scene_seed,
            ply: ply_name,
            annotations: ann_name,
        });
    }
    let manifest = SuiteManifest {
        seed,
        scenes: entries,
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialization");
    manifest_bytes.push(b'\n');
    std::fs::write(dir.join(MANIFEST_FILE), manifest_bytes)?;
    let gt = GroundTruthFile {
        class_names: class_names.unwrap_or_default(),
        scenes: gt_scenes,
    };
    std::fs::write(dir.join(GROUND_TRUTH_FILE), write_ground_truth(&gt))?;
    Ok(manifest)
}

/// Load a generated suite back from disk via its manifest.
pub fn load_suite(dir: &Path) -> Result<Vec<(String, PointCloud, SceneAnnotation)>> {
    let manifest_bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: SuiteManifest = serde_json::from_slice(&manifest_bytes)?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for entry in &manifest.scenes {
        let cloud = parse_ply(&std::fs::read(dir.join(&entry.ply))?)?;
        let annotation = parse_annotations(&std::fs::read(dir.join(&entry.annotations))?)?;
        scenes.push((entry.id.clone(), cloud, annotation));
    }
    Ok(scenes)
}
