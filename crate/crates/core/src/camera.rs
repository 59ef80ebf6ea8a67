//! Ideal pinhole camera. The camera frame has +x right, +y up and +z
//! opposite the line of sight; image rows grow downward, so the `v` axis is
//! flipped inside the projection.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::CameraPose;
use crate::scene::{Keypoints3, KEYPOINT_COUNT};
use crate::so3::Rotation;

/// Minimum depth along the line of sight for a point to count as in front.
pub const MIN_DEPTH: f64 = 1e-6;

pub const DEFAULT_MIN_VISIBLE_FRACTION: f64 = 0.5;

pub type Keypoints2 = [Vector2<f64>; KEYPOINT_COUNT];

#[derive(Debug, Error)]
pub enum IntrinsicsError {
    #[error("invalid intrinsics: {0}")]
    Invalid(String),
    #[error("reading intrinsics: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing intrinsics JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// 640×480 with a 60° horizontal field of view and square pixels.
    fn default() -> Self {
        Self::from_horizontal_fov(640, 480, 60f64.to_radians())
    }
}

impl CameraIntrinsics {
    pub fn from_horizontal_fov(width: u32, height: u32, hfov: f64) -> Self {
        let fx = 0.5 * f64::from(width) / (0.5 * hfov).tan();
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: 0.5 * f64::from(width) - 0.5,
            cy: 0.5 * f64::from(height) - 0.5,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), IntrinsicsError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(IntrinsicsError::Invalid(format!("{self:?}")))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IntrinsicsError> {
        let intr: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        intr.validate()?;
        Ok(intr)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < f64::from(self.width) && px.y >= 0.0 && px.y < f64::from(self.height)
    }

    /// Pixel of a camera-frame point (no depth check).
    #[inline]
    pub fn pixel(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        let depth = -pc.z;
        Vector2::new(self.fx * (pc.x / depth) + self.cx, self.cy - self.fy * (pc.y / depth))
    }

    /// Camera-frame point at `depth` along the ray through `px`.
    pub fn back_project(&self, px: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (px.x - self.cx) / self.fx * depth,
            (self.cy - px.y) / self.fy * depth,
            -depth,
        )
    }
}

/// Projected keypoints of one part.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints2D {
    pub pts: Keypoints2,
    pub in_image: [bool; KEYPOINT_COUNT],
    pub in_front: [bool; KEYPOINT_COUNT],
}

impl Keypoints2D {
    pub fn visible_count(&self) -> usize {
        self.in_front
            .iter()
            .zip(&self.in_image)
            .filter(|(f, i)| **f && **i)
            .count()
    }
}

/// Base-frame point into the camera frame: `Rᵀ (p − C)`.
#[inline]
pub fn to_camera_frame(pose: &CameraPose, p: &Vector3<f64>) -> Vector3<f64> {
    pose.attitude.matrix().tr_mul(&(p - pose.position))
}

/// Projects with an explicit base→camera transform `p_c = R p + t`.
#[inline]
pub fn project_point(intr: &CameraIntrinsics, r_bc: &Rotation, t: &Vector3<f64>, p: &Vector3<f64>) -> Option<Vector2<f64>> {
    let pc = r_bc.matrix() * p + t;
    (-pc.z > MIN_DEPTH).then(|| intr.pixel(&pc))
}

pub fn project(intr: &CameraIntrinsics, pose: &CameraPose, pts: &Keypoints3) -> Keypoints2D {
    let mut out = Keypoints2D {
        pts: [Vector2::zeros(); KEYPOINT_COUNT],
        in_image: [false; KEYPOINT_COUNT],
        in_front: [false; KEYPOINT_COUNT],
    };
    for (k, p) in pts.iter().enumerate() {
        let pc = to_camera_frame(pose, p);
        let front = -pc.z > MIN_DEPTH;
        // Behind-camera pixels are meaningless but kept finite.
        let px = if front { intr.pixel(&pc) } else { Vector2::new(-1.0, -1.0) };
        out.pts[k] = px;
        out.in_front[k] = front;
        out.in_image[k] = front && intr.contains(&px);
    }
    out
}

/// At least `min_fraction` of the keypoints are in front and inside the image.
pub fn part_visible(kp: &Keypoints2D, min_fraction: f64) -> bool {
    kp.visible_count() as f64 >= min_fraction * KEYPOINT_COUNT as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::exp_so3;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn axis_pose() -> CameraPose {
        // Camera at the origin looking down −z of the base frame.
        CameraPose {
            position: Vector3::zeros(),
            attitude: Rotation::identity(),
        }
    }

    fn cloud(f: impl Fn(usize) -> Vector3<f64>) -> Keypoints3 {
        std::array::from_fn(f)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let intr = CameraIntrinsics::default();
        let pts = cloud(|_| Vector3::new(0.0, 0.0, -5.0));
        let kp = project(&intr, &axis_pose(), &pts);
        assert_eq!(kp.pts[0], Vector2::new(intr.cx, intr.cy));
        assert!(kp.in_front[0] && kp.in_image[0]);
    }

    #[test]
    fn sign_conventions() {
        let intr = CameraIntrinsics::default();
        let kp = project(&intr, &axis_pose(), &cloud(|_| Vector3::new(0.5, 0.3, -5.0)));
        assert!(kp.pts[0].x > intr.cx, "+x maps right");
        assert!(kp.pts[0].y < intr.cy, "+y (up) maps to smaller row index");
        let behind = project(&intr, &axis_pose(), &cloud(|_| Vector3::new(0.0, 0.0, 5.0)));
        assert!(!behind.in_front[0] && !behind.in_image[0]);
        assert!(!part_visible(&behind, 0.5));
    }

    #[test]
    fn default_intrinsics() {
        let intr = CameraIntrinsics::default();
        assert_abs_diff_eq!(intr.fx, 320.0 / 30f64.to_radians().tan(), epsilon = 1e-12);
        assert_eq!((intr.cx, intr.cy), (319.5, 239.5));
        intr.validate().unwrap();
        let bad = CameraIntrinsics { fx: -1.0, ..intr };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn back_projection_round_trip() {
        let intr = CameraIntrinsics::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pose = CameraPose {
                position: Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0)),
                attitude: exp_so3(&Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0))),
            };
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let depth = rng.random_range(0.5..40.0);
            let p = pose.attitude * intr.back_project(&px, depth) + pose.position;
            let kp = project(&intr, &pose, &cloud(|_| p));
            assert_abs_diff_eq!(kp.pts[0], px, epsilon = 1e-9);
        }
    }

    #[test]
    fn focal_scaling_doubles_offsets() {
        let intr = CameraIntrinsics::default();
        let wide = CameraIntrinsics {
            fx: 2.0 * intr.fx,
            fy: 2.0 * intr.fy,
            ..intr
        };
        let pts = cloud(|k| Vector3::new(0.1 * k as f64 - 1.0, 0.05 * k as f64 - 0.7, -4.0 - 0.1 * k as f64));
        let a = project(&intr, &axis_pose(), &pts);
        let b = project(&wide, &axis_pose(), &pts);
        let c = Vector2::new(intr.cx, intr.cy);
        for k in 0..KEYPOINT_COUNT {
            assert_abs_diff_eq!(b.pts[k] - c, (a.pts[k] - c) * 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn visibility_boundary_is_inclusive() {
        let intr = CameraIntrinsics::default();
        let pts = cloud(|k| Vector3::new(0.0, 0.0, if k < 16 { -5.0 } else { 5.0 }));
        let kp = project(&intr, &axis_pose(), &pts);
        assert_eq!(kp.visible_count(), 16);
        assert!(part_visible(&kp, 0.5));
        assert!(!part_visible(&kp, 0.51));
        let all = project(&intr, &axis_pose(), &cloud(|_| Vector3::new(0.0, 0.0, -3.0)));
        assert!(part_visible(&all, 0.5));
    }

    #[test]
    fn hull_of_corners_contains_edge_points() {
        // Projection preserves collinearity, so each edge point lands between
        // its two projected corners when the whole edge is in front.
        let intr = CameraIntrinsics::default();
        let kp3 = crate::scene::keypoints_from_box(&Vector3::new(-1.0, -1.0, -9.0), &Vector3::new(1.0, 1.5, -6.0)).unwrap();
        let kp = project(&intr, &axis_pose(), &kp3);
        for (e, (a, b)) in crate::scene::BOX_EDGES.iter().enumerate() {
            for k in [8 + 2 * e, 9 + 2 * e] {
                let (pa, pb, q) = (kp.pts[*a], kp.pts[*b], kp.pts[k]);
                let ab = pb - pa;
                let t = (q - pa).dot(&ab) / ab.norm_squared();
                assert!((0.0..=1.0).contains(&t));
                assert!((pa + ab * t - q).norm() < 1e-9);
            }
        }
    }
}
