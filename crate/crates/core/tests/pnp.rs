use nalgebra::{Vector2, Vector3};
use posefuse::camera::{project, project_point};
use posefuse::pnp::{estimate_pose, RansacConfig};
use posefuse::rng::{stream_rng, Purpose};
use posefuse::sampler::{lookat_attitude, CameraPose};
use posefuse::scene::KEYPOINT_COUNT;
use posefuse::{CameraIntrinsics, Keypoints2, Scene};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const RANGE: f64 = 15.0;
const HOUSE: usize = 2;

/// A camera `RANGE` metres from the part centre, behind and above it, with
/// the whole part in view.
fn view(scene: &Scene, intr: &CameraIntrinsics, rng: &mut impl Rng) -> (CameraPose, Keypoints2) {
    let kp3 = &scene.part(HOUSE).keypoints;
    let centre = kp3.iter().sum::<Vector3<f64>>() / KEYPOINT_COUNT as f64;
    loop {
        let az: f64 = rng.random_range(-std::f64::consts::PI..0.0);
        let el: f64 = rng.random_range(0.1..1.0);
        let c = centre + RANGE * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        let pose = CameraPose {
            position: c,
            attitude: lookat_attitude(&c, &centre, rng.random_range(-0.5..0.5)).unwrap(),
        };
        let kp = project(intr, &pose, kp3);
        if kp.visible_count() == KEYPOINT_COUNT {
            return (pose, kp.pts);
        }
    }
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    x[x.len() / 2]
}

#[test]
fn translation_error_grows_with_pixel_noise() {
    let scene = Scene::default_ship();
    let intr = CameraIntrinsics::default();
    let valid = [true; KEYPOINT_COUNT];
    let mut medians = vec![];
    for (k, sigma) in [0.5, 1.0, 2.0, 4.0].into_iter().enumerate() {
        let cfg = RansacConfig {
            inlier_threshold: 4.0 * sigma,
            ..RansacConfig::default()
        };
        let mut rng = stream_rng(31, Purpose::Testing, k as u64);
        let noise = Normal::new(0.0, sigma).unwrap();
        let errs: Vec<f64> = (0..300)
            .map(|_| {
                let (pose, truth) = view(&scene, &intr, &mut rng);
                let noisy = truth.map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)));
                let fit = estimate_pose(&scene.part(HOUSE).keypoints, &noisy, &valid, &intr, &cfg, &mut rng).unwrap();
                let (_, t_true) = pose.to_extrinsics();
                (fit.translation - t_true).norm()
            })
            .collect();
        medians.push(median(errs));
    }
    for w in medians.windows(2) {
        assert!(w[1] >= w[0], "median translation error by σ: {medians:?}");
    }
}

#[test]
fn inliers_reproject_within_threshold() {
    let scene = Scene::default_ship();
    let intr = CameraIntrinsics::default();
    let cfg = RansacConfig::default();
    let mut rng = stream_rng(32, Purpose::Testing, 0);
    let noise = Normal::new(0.0, 2.0).unwrap();
    let kp3 = &scene.part(HOUSE).keypoints;
    for _ in 0..100 {
        let (_, truth) = view(&scene, &intr, &mut rng);
        let mut pts = truth.map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)));
        for k in 0..4 {
            pts[k * 7] += Vector2::new(60.0, -45.0);
        }
        let fit = estimate_pose(kp3, &pts, &[true; KEYPOINT_COUNT], &intr, &cfg, &mut rng).unwrap();
        for k in (0..KEYPOINT_COUNT).filter(|&k| fit.inliers[k]) {
            let px = project_point(&intr, &fit.rotation, &fit.translation, &kp3[k]).unwrap();
            assert!((px - pts[k]).norm() < cfg.inlier_threshold);
        }
        assert!((0..4).all(|k| !fit.inliers[k * 7]));
    }
}
