//! File formats at the project boundary: PLY point clouds, JSON
//! annotations/detections, and plain-text superpoint labels.

mod annotations;
mod ply;
mod superpoints;

pub use annotations::{
    parse_annotations, parse_detections, parse_ground_truth, write_annotations, write_detections,
    write_ground_truth, DetectionsFile, GroundTruthFile, SceneDetections, SceneGroundTruth,
};
pub use ply::{parse_ply, write_ply};
pub use superpoints::{parse_superpoints, write_superpoints};
