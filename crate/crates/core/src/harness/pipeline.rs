use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::assignment::{hungarian_match, keypoint_loss, GroundTruthFrame};
use crate::camera::CameraIntrinsics;
use crate::detector::{misassign, random_permutation, simulate, DetectionSet};
use crate::fusion::{fuse, FusedPose, FusionConfig};
use crate::pnp::{estimate_pose, PartPoseEstimate, RansacConfig};
use crate::rng::{stream_rng, Purpose};
use crate::sampler::CameraPose;
use crate::scene::{ground_truth_labels, Scene, CLASS_COUNT, KEYPOINT_COUNT, NO_OBJECT, PART_COUNT};
use crate::so3::{geodesic_angle, log_so3};

/// Caps the worker count of [`run_pipeline`].
pub const THREADS_ENV: &str = "POSEFUSE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameInput {
    pub frame_id: usize,
    pub timestamp: Option<f64>,
    pub pose: CameraPose,
}

/// Simulated detector output for a frame, with the ground truth the loss
/// is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub detections: DetectionSet,
    pub truth: GroundTruthFrame,
    pub n_visible: usize,
}

/// One detected class: the query that reported it and the pose recovery
/// outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PartAttempt {
    pub class_index: usize,
    pub query: usize,
    pub confidence: f64,
    pub result: Result<PartPoseEstimate, String>,
}

/// Error of one part's implied camera pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartError {
    pub class_index: usize,
    pub confidence: f64,
    /// Passed the confidence gate.
    pub gated_in: bool,
    pub pos_error: f64,
    pub rot_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub timestamp: Option<f64>,
    pub true_pose: CameraPose,
    /// Camera distance from the base-frame origin.
    pub range: f64,
    /// `None` marks a gap: no part survived estimation and gating.
    pub fused: Option<FusedPose>,
    pub per_part: Vec<PartPoseEstimate>,
    pub part_errors: Vec<PartError>,
    /// Fused position error, metres.
    pub pos_error: Option<f64>,
    pub pos_error_vec: Option<Vector3<f64>>,
    /// Geodesic attitude error, radians.
    pub rot_error: Option<f64>,
    /// True attitude in the coordinates of the fused attitude covariance.
    pub eta: Option<Vector3<f64>>,
    pub loss: f64,
    pub n_visible: usize,
    pub n_detected: usize,
    pub n_failed: usize,
}

impl FrameRecord {
    pub fn is_gap(&self) -> bool {
        self.fused.is_none()
    }
}

pub fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub fn detect_frame(scene: &Scene, intr: &CameraIntrinsics, input: &FrameInput, cfg: &PipelineConfig) -> FrameDetections {
    let id = input.frame_id as u64;
    let sim = simulate(scene, intr, &input.pose, &cfg.noise, &mut stream_rng(cfg.noise.seed, Purpose::Detector, id));
    let truth = GroundTruthFrame {
        c_g: ground_truth_labels(&sim.visible),
        keypoints: std::array::from_fn(|i| (i < PART_COUNT && sim.visible[i]).then(|| sim.truth[i])),
    };
    let detections = if cfg.permute_queries {
        let perm = random_permutation(&mut stream_rng(cfg.seed, Purpose::QueryOrder, id));
        misassign(&sim.detections, &perm).expect("random_permutation is a permutation")
    } else {
        sim.detections
    };
    FrameDetections {
        detections,
        truth,
        n_visible: sim.visible.iter().filter(|&&v| v).count(),
    }
}

/// Recovers a pose for every class some query claims. When two queries
/// claim the same class the more confident one wins.
pub fn estimate_parts(
    scene: &Scene,
    intr: &CameraIntrinsics,
    frame_id: usize,
    ds: &DetectionSet,
    ransac: &RansacConfig,
) -> Vec<PartAttempt> {
    let mut claims: [Option<(usize, f64)>; CLASS_COUNT] = [None; CLASS_COUNT];
    for q in 0..CLASS_COUNT {
        let (class, conf) = ds.argmax(q);
        if class != NO_OBJECT && claims[class].is_none_or(|(_, c)| conf > c) {
            claims[class] = Some((q, conf));
        }
    }
    claims
        .iter()
        .enumerate()
        .filter_map(|(class, claim)| claim.map(|(q, conf)| (class, q, conf)))
        .map(|(class, q, confidence)| {
            let kp = &ds.keypoints[q];
            let valid: [bool; KEYPOINT_COUNT] = std::array::from_fn(|k| intr.contains(&kp[k]));
            let mut rng = stream_rng(ransac.seed, Purpose::Ransac, (frame_id * CLASS_COUNT + class) as u64);
            let result = estimate_pose(&scene.part(class).keypoints, kp, &valid, intr, ransac, &mut rng)
                .map(|fit| PartPoseEstimate::from_fit(class, confidence, fit))
                .map_err(|e| e.to_string());
            PartAttempt {
                class_index: class,
                query: q,
                confidence,
                result,
            }
        })
        .collect()
}

/// Pose errors of a fused or single-part estimate against the truth.
fn errors(truth: &CameraPose, estimate: &CameraPose) -> (f64, f64) {
    (
        (estimate.position - truth.position).norm(),
        geodesic_angle(&estimate.attitude, &truth.attitude),
    )
}

pub fn fuse_frame(input: &FrameInput, estimates: Vec<PartPoseEstimate>, fusion: &FusionConfig) -> FrameRecord {
    let truth = input.pose;
    let part_errors = estimates
        .iter()
        .map(|e| {
            let (pos_error, rot_error) = errors(&truth, &e.camera_pose());
            PartError {
                class_index: e.class_index,
                confidence: e.confidence,
                gated_in: e.confidence > fusion.gate,
                pos_error,
                rot_error,
            }
        })
        .collect();
    let fused = fuse(&estimates, fusion).ok();
    let (pos_error_vec, rot_error, eta) = match &fused {
        Some(f) => {
            let eta = log_so3(&(f.svd.u.transpose() * truth.attitude * f.svd.v));
            (
                Some(f.mu_t - truth.position),
                Some(geodesic_angle(&f.mu_r, &truth.attitude)),
                Some(eta),
            )
        }
        None => (None, None, None),
    };
    FrameRecord {
        frame_id: input.frame_id,
        timestamp: input.timestamp,
        true_pose: truth,
        range: truth.position.norm(),
        fused,
        per_part: estimates,
        part_errors,
        pos_error: pos_error_vec.map(|v| v.norm()),
        pos_error_vec,
        rot_error,
        eta,
        loss: 0.0,
        n_visible: 0,
        n_detected: 0,
        n_failed: 0,
    }
}

pub fn process_frame(scene: &Scene, intr: &CameraIntrinsics, input: &FrameInput, cfg: &PipelineConfig) -> FrameRecord {
    let det = detect_frame(scene, intr, input, cfg);
    let m = hungarian_match(&det.detections.probs, &det.truth.c_g);
    let loss = keypoint_loss(&m, &det.detections.probs, &det.detections.keypoints, &det.truth, &cfg.loss);
    let attempts = estimate_parts(scene, intr, input.frame_id, &det.detections, &cfg.ransac);
    let n_detected = attempts.len();
    let estimates: Vec<PartPoseEstimate> = attempts.into_iter().filter_map(|a| a.result.ok()).collect();
    let n_failed = n_detected - estimates.len();
    FrameRecord {
        loss,
        n_visible: det.n_visible,
        n_detected,
        n_failed,
        ..fuse_frame(input, estimates, &cfg.fusion)
    }
}

/// Runs every frame on a worker pool; records come back in input order.
pub fn run_pipeline(scene: &Scene, intr: &CameraIntrinsics, frames: &[FrameInput], cfg: &PipelineConfig) -> Vec<FrameRecord> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().expect("thread pool");
    let mut records: Vec<FrameRecord> =
        pool.install(|| frames.par_iter().map(|f| process_frame(scene, intr, f, cfg)).collect());
    records.sort_by_key(|r| r.frame_id);
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::NoiseConfig;
    use crate::sampler::PoseSampler;

    fn frames(cfg: &PipelineConfig, n: usize) -> Vec<FrameInput> {
        PoseSampler::new(&cfg.sampler)
            .unwrap()
            .sample_poses(cfg.sampler.seed, n)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(frame_id, pose)| FrameInput {
                frame_id,
                timestamp: None,
                pose,
            })
            .collect()
    }

    #[test]
    fn noiseless_frames_are_exact() {
        let cfg = PipelineConfig {
            noise: NoiseConfig::noiseless(),
            ..PipelineConfig::default().with_seed(5)
        };
        let scene = Scene::default_ship();
        let intr = CameraIntrinsics::default();
        let records = run_pipeline(&scene, &intr, &frames(&cfg, 60), &cfg);
        assert_eq!(records.len(), 60);
        for r in records.iter().filter(|r| !r.is_gap()) {
            assert!(r.pos_error.unwrap() < 1e-6, "frame {}: {:?}", r.frame_id, r.pos_error);
            assert!(r.rot_error.unwrap().to_degrees() < 1e-4);
        }
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.frame_id, i);
        }
    }

    #[test]
    fn full_dropout_gives_only_gaps() {
        let cfg = PipelineConfig {
            noise: NoiseConfig {
                dropout_prob: 1.0,
                ..Default::default()
            },
            ..PipelineConfig::default()
        };
        let records = run_pipeline(&Scene::default_ship(), &CameraIntrinsics::default(), &frames(&cfg, 20), &cfg);
        assert!(records.iter().all(|r| r.is_gap() && r.per_part.is_empty()));
    }

    #[test]
    fn query_order_does_not_change_estimates() {
        let base = PipelineConfig::default().with_seed(8);
        let shuffled = PipelineConfig {
            permute_queries: true,
            ..base.clone()
        };
        let ordered = PipelineConfig {
            permute_queries: false,
            ..base
        };
        let scene = Scene::default_ship();
        let intr = CameraIntrinsics::default();
        for f in frames(&ordered, 15) {
            let a = process_frame(&scene, &intr, &f, &shuffled);
            let b = process_frame(&scene, &intr, &f, &ordered);
            assert_eq!(a.per_part, b.per_part);
            assert_eq!(a.fused, b.fused);
            assert!((a.loss - b.loss).abs() < 1e-9 * (1.0 + a.loss));
        }
    }
}
