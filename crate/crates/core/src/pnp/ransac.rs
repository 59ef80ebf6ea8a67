use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{epnp, PnpError};
use crate::camera::{project_point, CameraIntrinsics, Keypoints2};
use crate::scene::{Keypoints3, KEYPOINT_COUNT};
use crate::so3::Rotation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Reprojection error below which a correspondence is an inlier, pixels.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub sample_size: usize,
    /// Stop early once a model with this probability of having drawn an
    /// all-inlier sample is found. 1 disables early termination.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 200,
            inlier_threshold: 4.0,
            min_inliers: 12,
            sample_size: 6,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        let problem = if self.sample_size < 4 {
            "sample_size must be at least 4"
        } else if self.min_inliers < self.sample_size {
            "min_inliers must be at least sample_size"
        } else if self.min_inliers > KEYPOINT_COUNT {
            "min_inliers cannot exceed the keypoint count"
        } else if !(self.inlier_threshold > 0.0) {
            "inlier_threshold must be positive"
        } else if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            "confidence must lie in (0, 1]"
        } else {
            return Ok(());
        };
        Err(PnpError::InvalidConfig(problem.into()))
    }
}

/// RANSAC output before a class and confidence are attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFit {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub inliers: [bool; KEYPOINT_COUNT],
    pub reproj_error: f64,
}

struct Consensus {
    mask: [bool; KEYPOINT_COUNT],
    count: usize,
    mean_error: f64,
}

fn consensus(
    r: &Rotation,
    t: &Vector3<f64>,
    pts3d: &Keypoints3,
    pts2d: &Keypoints2,
    valid: &[bool; KEYPOINT_COUNT],
    intr: &CameraIntrinsics,
    threshold: f64,
) -> Consensus {
    let mut mask = [false; KEYPOINT_COUNT];
    let mut total = 0.0;
    for k in (0..KEYPOINT_COUNT).filter(|&k| valid[k]) {
        if let Some(px) = project_point(intr, r, t, &pts3d[k]) {
            let e = (px - pts2d[k]).norm();
            if e < threshold {
                mask[k] = true;
                total += e;
            }
        }
    }
    let count = mask.iter().filter(|&&m| m).count();
    Consensus {
        mask,
        count,
        mean_error: if count > 0 { total / count as f64 } else { f64::INFINITY },
    }
}

fn better(a: &Consensus, b: &Consensus) -> bool {
    a.count > b.count || (a.count == b.count && a.mean_error < b.mean_error)
}

fn required_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> f64 {
    let all_good = inlier_ratio.powi(sample_size as i32);
    if all_good >= 1.0 {
        0.0
    } else if all_good <= 0.0 || confidence >= 1.0 {
        f64::INFINITY
    } else {
        ((1.0 - confidence).ln() / (1.0 - all_good).ln()).ceil()
    }
}

fn subset(idx: &[usize], pts3d: &Keypoints3, pts2d: &Keypoints2) -> (Vec<Vector3<f64>>, Vec<Vector2<f64>>) {
    idx.iter().map(|&k| (pts3d[k], pts2d[k])).unzip()
}

/// Robust EPnP over the `valid` correspondences, followed by a refit on
/// the consensus set.
pub fn estimate_pose<R: Rng + ?Sized>(
    pts3d: &Keypoints3,
    pts2d: &Keypoints2,
    valid: &[bool; KEYPOINT_COUNT],
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
    rng: &mut R,
) -> Result<PoseFit, PnpError> {
    cfg.validate()?;
    let candidates: Vec<usize> = (0..KEYPOINT_COUNT).filter(|&k| valid[k]).collect();
    if candidates.len() < cfg.min_inliers {
        return Err(PnpError::EstimationFailed {
            required: cfg.min_inliers,
            best: 0,
        });
    }

    let mut best: Option<(Rotation, Vector3<f64>, Consensus)> = None;
    let mut budget = cfg.max_iterations as f64;
    let mut iteration = 0;
    while (iteration as f64) < budget.min(cfg.max_iterations as f64) {
        iteration += 1;
        let picks: Vec<usize> = sample(rng, candidates.len(), cfg.sample_size)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        let (p3, p2) = subset(&picks, pts3d, pts2d);
        let Ok(sol) = epnp(&p3, &p2, intr) else { continue };
        let c = consensus(&sol.rotation, &sol.translation, pts3d, pts2d, valid, intr, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|(_, _, b)| better(&c, b)) {
            let ratio = c.count as f64 / candidates.len() as f64;
            budget = required_iterations(ratio, cfg.sample_size, cfg.confidence);
            best = Some((sol.rotation, sol.translation, c));
        }
    }

    let Some((mut rotation, mut translation, mut support)) = best else {
        return Err(PnpError::EstimationFailed {
            required: cfg.min_inliers,
            best: 0,
        });
    };
    if support.count < cfg.min_inliers {
        return Err(PnpError::EstimationFailed {
            required: cfg.min_inliers,
            best: support.count,
        });
    }

    let inliers: Vec<usize> = (0..KEYPOINT_COUNT).filter(|&k| support.mask[k]).collect();
    let (p3, p2) = subset(&inliers, pts3d, pts2d);
    if let Ok(refit) = epnp(&p3, &p2, intr) {
        let c = consensus(&refit.rotation, &refit.translation, pts3d, pts2d, valid, intr, cfg.inlier_threshold);
        if c.count >= cfg.min_inliers && c.count >= support.count {
            rotation = refit.rotation;
            translation = refit.translation;
            support = c;
        }
    }
    Ok(PoseFit {
        rotation,
        translation,
        inliers: support.mask,
        reproj_error: support.mean_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use crate::rng::{stream_rng, Purpose};
    use crate::sampler::{lookat_attitude, CameraPose};
    use crate::scene::Scene;
    use crate::so3::geodesic_angle;
    use rand_distr::{Distribution, Normal};

    fn close_pose() -> CameraPose {
        let c = Vector3::new(-6.0, -14.0, 8.0);
        CameraPose {
            position: c,
            attitude: lookat_attitude(&c, &Vector3::new(0.0, 11.0, 2.0), 0.1).unwrap(),
        }
    }

    #[test]
    fn noiseless_consensus_is_total() {
        let intr = CameraIntrinsics::default();
        let scene = Scene::default_ship();
        let pose = close_pose();
        for part in scene.parts() {
            let kp = project(&intr, &pose, &part.keypoints);
            let fit = estimate_pose(&part.keypoints, &kp.pts, &kp.in_front, &intr, &RansacConfig::default(), &mut stream_rng(1, Purpose::Testing, 0)).unwrap();
            assert_eq!(fit.inliers, kp.in_front);
            assert!(fit.reproj_error < 1e-6);
        }
    }

    #[test]
    fn too_few_valid_points() {
        let intr = CameraIntrinsics::default();
        let part = &Scene::default_ship().parts()[2].clone();
        let kp = project(&intr, &close_pose(), &part.keypoints);
        let mut valid = [false; KEYPOINT_COUNT];
        valid[..11].fill(true);
        let err = estimate_pose(&part.keypoints, &kp.pts, &valid, &intr, &RansacConfig::default(), &mut stream_rng(2, Purpose::Testing, 0));
        assert!(matches!(err, Err(PnpError::EstimationFailed { .. })));
    }

    #[test]
    fn gross_outliers_are_rejected() {
        let intr = CameraIntrinsics::default();
        let scene = Scene::default_ship();
        let part = scene.part(2);
        let pose = close_pose();
        let (r_true, t_true) = pose.to_extrinsics();
        let kp = project(&intr, &pose, &part.keypoints);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let trials = 100;
        let mut clean_hits = 0;
        for trial in 0..trials {
            let mut rng = stream_rng(3, Purpose::Testing, trial);
            let mut obs = kp.pts;
            for p in obs.iter_mut() {
                *p += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            let outliers: Vec<usize> = sample(&mut rng, KEYPOINT_COUNT, 8).into_vec();
            for &k in &outliers {
                obs[k] = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            }
            let fit = estimate_pose(&part.keypoints, &obs, &[true; KEYPOINT_COUNT], &intr, &RansacConfig::default(), &mut rng).unwrap();
            assert!((fit.translation - t_true).norm() < 0.5);
            assert!(geodesic_angle(&fit.rotation, &r_true) < 0.05);
            // Replaced points that happen to land near their true pixel
            // are legitimately kept.
            let contaminated = outliers
                .iter()
                .filter(|&&k| fit.inliers[k] && (obs[k] - kp.pts[k]).norm() > 2.0 * 4.0)
                .count();
            if contaminated == 0 {
                clean_hits += 1;
            }
            for k in (0..KEYPOINT_COUNT).filter(|&k| fit.inliers[k]) {
                let px = project_point(&intr, &fit.rotation, &fit.translation, &part.keypoints[k]).unwrap();
                assert!((px - obs[k]).norm() < 4.0);
            }
        }
        assert!(clean_hits >= 95, "{clean_hits}");
    }

    #[test]
    fn config_invariants() {
        RansacConfig::default().validate().unwrap();
        assert!(RansacConfig { sample_size: 3, ..Default::default() }.validate().is_err());
        assert!(RansacConfig { min_inliers: 5, ..Default::default() }.validate().is_err());
        assert_eq!(required_iterations(1.0, 6, 0.99), 0.0);
        assert!(required_iterations(0.5, 6, 1.0).is_infinite());
        // 0.75⁶ ≈ 0.178 all-inlier draws need ~36 tries at 99.9%.
        assert_eq!(required_iterations(0.75, 6, 0.999), 36.0);
    }
}
