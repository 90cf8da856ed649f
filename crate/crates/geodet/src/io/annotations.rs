//! JSON interchange for scene annotations, detection results, and the
//! suite-level ground-truth / detections files consumed by the evaluator.
//!
//! Annotation schema:
//! ```json
//! {"class_names": ["chair"], "boxes": [{"center": [0,0,0], "size": [1,1,1], "class_id": 0}]}
//! ```
//!
//! Ground-truth file (one per scene directory):
//! ```json
//! {"class_names": [...], "scenes": [{"scene_id": "scene_000", "boxes": [...]}]}
//! ```
//!
//! Detections file:
//! ```json
//! {"scenes": [{"scene_id": "scene_000", "detections":
//!   [{"center": [...], "size": [...], "class_id": 0, "score": 0.9}]}]}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{Box3D, Detection, SceneAnnotation};

pub fn parse_annotations(bytes: &[u8]) -> Result<SceneAnnotation> {
    let ann: SceneAnnotation = serde_json::from_slice(bytes)?;
    ann.validate()?;
    Ok(ann)
}

pub fn write_annotations(ann: &SceneAnnotation) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(ann).expect("annotation serialization");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGroundTruth {
    pub scene_id: String,
    pub boxes: Vec<Box3D>,
}

/// All ground truth for a scene suite, in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub class_names: Vec<String>,
    pub scenes: Vec<SceneGroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDetections {
    pub scene_id: String,
    pub detections: Vec<Detection>,
}

/// All detections for a scene suite, in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub scenes: Vec<SceneDetections>,
}

pub fn parse_ground_truth(bytes: &[u8]) -> Result<GroundTruthFile> {
    let gt: GroundTruthFile = serde_json::from_slice(bytes)?;
    for scene in &gt.scenes {
        for b in &scene.boxes {
            b.validate(Some(gt.class_names.len()))?;
        }
    }
    Ok(gt)
}

pub fn write_ground_truth(gt: &GroundTruthFile) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(gt).expect("ground truth serialization");
    out.push(b'\n');
    out
}

pub fn parse_detections(bytes: &[u8]) -> Result<DetectionsFile> {
    let dets: DetectionsFile = serde_json::from_slice(bytes)?;
    for scene in &dets.scenes {
        for d in &scene.detections {
            d.box3d().validate(None)?;
            if !d.score.is_finite() || d.score < 0.0 || d.score > 1.0 {
                return Err(crate::error::Error::validation(format!(
                    "detection score {} in scene '{}' outside [0, 1]",
                    d.score, scene.scene_id
                )));
            }
        }
    }
    Ok(dets)
}

pub fn write_detections(dets: &DetectionsFile) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(dets).expect("detections serialization");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn single_box_annotation_parses() {
        let text = br#"{"class_names":["chair"],"boxes":[{"center":[0,0,0],"size":[1,1,1],"class_id":0}]}"#;
        let ann = parse_annotations(text).unwrap();
        assert_eq!(ann.boxes.len(), 1);
        assert_eq!(ann.class_names, vec!["chair"]);
    }

    #[test]
    fn class_id_out_of_range_rejected() {
        let text = br#"{"class_names":["a","b"],"boxes":[{"center":[0,0,0],"size":[1,1,1],"class_id":3}]}"#;
        assert!(matches!(
            parse_annotations(text).unwrap_err(),
            Error::Validation(_)
        ));
    }

    #[test]
    fn non_positive_size_rejected() {
        let text = br#"{"class_names":["a"],"boxes":[{"center":[0,0,0],"size":[1,0,1],"class_id":0}]}"#;
        assert!(parse_annotations(text).is_err());
    }

    #[test]
    fn empty_boxes_are_legal() {
        let text = br#"{"class_names":["a"],"boxes":[]}"#;
        let ann = parse_annotations(text).unwrap();
        assert!(ann.boxes.is_empty());
    }

    #[test]
    fn annotation_round_trip() {
        let ann = SceneAnnotation {
            class_names: vec!["table".into(), "sofa".into()],
            boxes: vec![Box3D::new([0.25, -1.5, 0.75], [0.5, 1.25, 0.5], 1)],
        };
        let parsed = parse_annotations(&write_annotations(&ann)).unwrap();
        assert_eq!(parsed, ann);
    }

    #[test]
    fn detection_score_out_of_range_rejected() {
        let text = br#"{"scenes":[{"scene_id":"s","detections":[{"center":[0,0,0],"size":[1,1,1],"class_id":0,"score":1.5}]}]}"#;
        assert!(parse_detections(text).is_err());
    }
}
