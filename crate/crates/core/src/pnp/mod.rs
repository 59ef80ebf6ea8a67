//! Per-part camera pose from 2D–3D keypoint correspondences.

mod epnp;
mod ransac;

pub use epnp::{epnp, PnpSolution, PLANAR_EXTENT};
pub use ransac::{estimate_pose, PoseFit, RansacConfig};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::CameraPose;
use crate::scene::KEYPOINT_COUNT;
use crate::so3::Rotation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("{0} 3D points but {1} image points")]
    LengthMismatch(usize, usize),
    #[error("3D points are collinear")]
    Collinear,
    #[error("no model reached {required} inliers (best {best})")]
    EstimationFailed { required: usize, best: usize },
    #[error("invalid RANSAC config: {0}")]
    InvalidConfig(String),
}

/// Recovered pose of one part. `(rotation, translation)` map base-frame
/// points into the camera frame, `p_c = R p + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartPoseEstimate {
    pub class_index: usize,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub confidence: f64,
    pub inliers: [bool; KEYPOINT_COUNT],
    /// Mean inlier reprojection error, pixels.
    pub reproj_error: f64,
}

impl PartPoseEstimate {
    pub fn from_fit(class_index: usize, confidence: f64, fit: PoseFit) -> Self {
        PartPoseEstimate {
            class_index,
            rotation: fit.rotation,
            translation: fit.translation,
            confidence,
            inliers: fit.inliers,
            reproj_error: fit.reproj_error,
        }
    }

    /// Camera position `C = −Rᵀ t` and attitude `Rᵀ` in the base frame.
    pub fn camera_pose(&self) -> CameraPose {
        CameraPose::from_extrinsics(&self.rotation, &self.translation)
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}
