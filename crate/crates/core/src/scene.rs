//! Ship-fixed base frame, the six-part decomposition and the canonical
//! 32-keypoint bounding boxes.
//!
//! Keypoint layout: corners `0..8` are indexed `4·bx + 2·by + bz` where a
//! zero bit selects the minimum and a one bit the maximum along that axis.
//! The twelve edges are the corner pairs differing in exactly one bit,
//! sorted lexicographically; each contributes its `t = 1/3` point and then
//! its `t = 2/3` point (indices `8..32`).

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Keypoints per part.
pub const KEYPOINT_COUNT: usize = 32;
/// Number of ship parts.
pub const PART_COUNT: usize = 6;
/// Object classes including the no-object class.
pub const CLASS_COUNT: usize = PART_COUNT + 1;
/// Index of the no-object class.
pub const NO_OBJECT: usize = CLASS_COUNT - 1;

pub type Keypoints3 = [Vector3<f64>; KEYPOINT_COUNT];

/// Binary presence vector over all classes; the last slot is always false.
pub type ClassLabels = [bool; CLASS_COUNT];

/// Corner-index pairs of the twelve box edges, in canonical order.
pub const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (0, 2),
    (0, 4),
    (1, 3),
    (1, 5),
    (2, 3),
    (2, 6),
    (3, 7),
    (4, 5),
    (4, 6),
    (5, 7),
    (6, 7),
];

const DEFAULT_SCENE: &str = include_str!("../data/default_scene.json");

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("degenerate box: extent along axis {axis} is {extent}")]
    DegenerateBox { axis: usize, extent: f64 },
    #[error("scene must define {PART_COUNT} parts, found {0}")]
    PartCount(usize),
    #[error("class indices must be exactly 0..{PART_COUNT}; got {0:?}")]
    ClassIndices(Vec<usize>),
    #[error("non-finite coordinate in part {0:?}")]
    NonFinite(String),
    #[error("reading scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scene JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// How a part's box is specified in the scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartGeometry {
    Box { min: [f64; 3], max: [f64; 3] },
    Corners([[f64; 3]; 8]),
}

impl PartGeometry {
    pub fn keypoints(&self) -> Result<Keypoints3, SceneError> {
        match self {
            PartGeometry::Box { min, max } => {
                keypoints_from_box(&Vector3::from(*min), &Vector3::from(*max))
            }
            PartGeometry::Corners(c) => Ok(keypoints_from_corners(&c.map(Vector3::from))),
        }
    }
}

/// One ship part and its keypoints in the base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PartModel {
    pub class_index: usize,
    pub name: String,
    pub geometry: PartGeometry,
    pub keypoints: Keypoints3,
}

impl PartModel {
    pub fn new(class_index: usize, name: impl Into<String>, geometry: PartGeometry) -> Result<Self, SceneError> {
        let name = name.into();
        let keypoints = geometry.keypoints()?;
        if keypoints.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(SceneError::NonFinite(name));
        }
        Ok(PartModel {
            class_index,
            name,
            geometry,
            keypoints,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartEntry {
    name: String,
    class_index: usize,
    #[serde(flatten)]
    geometry: PartGeometry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneFile {
    parts: Vec<PartEntry>,
}

/// The six ship parts, ordered by class index. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    parts: Vec<PartModel>,
}

impl Scene {
    pub fn new(mut parts: Vec<PartModel>) -> Result<Self, SceneError> {
        if parts.len() != PART_COUNT {
            return Err(SceneError::PartCount(parts.len()));
        }
        parts.sort_by_key(|p| p.class_index);
        let indices: Vec<usize> = parts.iter().map(|p| p.class_index).collect();
        if indices.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(SceneError::ClassIndices(indices));
        }
        Ok(Scene { parts })
    }

    /// The bundled default ship.
    pub fn default_ship() -> Self {
        Self::from_json(DEFAULT_SCENE).expect("bundled scene is valid")
    }

    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(s)?;
        let parts = file
            .parts
            .into_iter()
            .map(|e| PartModel::new(e.class_index, e.name, e.geometry))
            .collect::<Result<Vec<_>, _>>()?;
        Scene::new(parts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = SceneFile {
            parts: self
                .parts
                .iter()
                .map(|p| PartEntry {
                    name: p.name.clone(),
                    class_index: p.class_index,
                    geometry: p.geometry.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("scene serializes")
    }

    pub fn parts(&self) -> &[PartModel] {
        &self.parts
    }

    pub fn part(&self, class_index: usize) -> &PartModel {
        &self.parts[class_index]
    }

    pub fn no_object_index(&self) -> usize {
        NO_OBJECT
    }
}

/// Expands an axis-aligned box into the 32 canonical keypoints.
pub fn keypoints_from_box(min: &Vector3<f64>, max: &Vector3<f64>) -> Result<Keypoints3, SceneError> {
    for axis in 0..3 {
        let extent = max[axis] - min[axis];
        // written to also reject NaN
        if !(extent > 0.0) {
            return Err(SceneError::DegenerateBox { axis, extent });
        }
    }
    let corners: [Vector3<f64>; 8] = std::array::from_fn(|i| {
        Vector3::new(
            if i & 4 != 0 { max.x } else { min.x },
            if i & 2 != 0 { max.y } else { min.y },
            if i & 1 != 0 { max.z } else { min.z },
        )
    });
    Ok(keypoints_from_corners(&corners))
}

/// Expands 8 corners (canonical corner order) into the 32 keypoints.
pub fn keypoints_from_corners(corners: &[Vector3<f64>; 8]) -> Keypoints3 {
    let mut out = [Vector3::zeros(); KEYPOINT_COUNT];
    out[..8].copy_from_slice(corners);
    for (e, &(a, b)) in BOX_EDGES.iter().enumerate() {
        let (pa, pb) = (corners[a], corners[b]);
        out[8 + 2 * e] = pa * (2.0 / 3.0) + pb * (1.0 / 3.0);
        out[9 + 2 * e] = pa * (1.0 / 3.0) + pb * (2.0 / 3.0);
    }
    out
}

/// Presence labels: one per visible part, the no-object slot always zero.
pub fn ground_truth_labels(visible: &[bool; PART_COUNT]) -> ClassLabels {
    let mut c = [false; CLASS_COUNT];
    c[..PART_COUNT].copy_from_slice(visible);
    c
}
