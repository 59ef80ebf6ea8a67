//! Parametric stand-in for the keypoint network at inference time. Produces
//! the same output interface: one class-probability row and one 32-keypoint
//! array per object query.

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{part_visible, project, CameraIntrinsics, Keypoints2, DEFAULT_MIN_VISIBLE_FRACTION};
use crate::sampler::CameraPose;
use crate::scene::{Scene, CLASS_COUNT, KEYPOINT_COUNT, NO_OBJECT, PART_COUNT};

/// No-object rows for absent parts put more than this on the ∅ class.
const NO_OBJECT_MIN_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("invalid noise config: {0}")]
    InvalidConfig(String),
    #[error("{0:?} is not a permutation of 0..{CLASS_COUNT}")]
    NotAPermutation(Vec<usize>),
    #[error("row {row} of the probability matrix is not a distribution")]
    NotStochastic { row: usize },
}

pub type ProbabilityMatrix = [[f64; CLASS_COUNT]; CLASS_COUNT];
pub type Permutation = [usize; CLASS_COUNT];

/// Per-frame detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    /// `probs[i][j]`: probability that query `i` shows class `j`.
    pub probs: ProbabilityMatrix,
    pub keypoints: [Keypoints2; CLASS_COUNT],
}

impl DetectionSet {
    /// Class decision and confidence for query `i`.
    pub fn argmax(&self, i: usize) -> (usize, f64) {
        let row = &self.probs[i];
        let mut best = 0;
        for j in 1..CLASS_COUNT {
            if row[j] > row[best] {
                best = j;
            }
        }
        (best, row[best])
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        for (row, p) in self.probs.iter().enumerate() {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(DetectorError::NotStochastic { row });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Isotropic Gaussian keypoint noise, pixels.
    pub pixel_sigma: f64,
    /// Visible-part confidence is `floor + (1 − floor)·Beta(α, β)`.
    pub confidence_alpha: f64,
    pub confidence_beta: f64,
    pub confidence_floor: f64,
    /// Probability that a visible part is missed outright.
    pub dropout_prob: f64,
    /// Drop parts whose projected keypoints span less than
    /// `min_diagonal_px` (bounding-box diagonal).
    pub range_dropout: bool,
    pub min_diagonal_px: f64,
    /// Fraction of keypoints that must be in view for a part to count as
    /// present.
    pub min_visible_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            pixel_sigma: 2.0,
            confidence_alpha: 8.0,
            confidence_beta: 1.0,
            confidence_floor: 0.85,
            dropout_prob: 0.0,
            range_dropout: false,
            min_diagonal_px: 60.0,
            min_visible_fraction: DEFAULT_MIN_VISIBLE_FRACTION,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            pixel_sigma: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        let mut problems = vec![];
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            problems.push("pixel_sigma must be finite and >= 0");
        }
        if !(self.confidence_alpha > 0.0 && self.confidence_beta > 0.0) {
            problems.push("Beta parameters must be positive");
        }
        if !(prob(self.confidence_floor) && prob(self.dropout_prob) && prob(self.min_visible_fraction)) {
            problems.push("confidence_floor, dropout_prob and min_visible_fraction must lie in [0, 1]");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DetectorError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// What the simulator decided for each part, alongside its output.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub detections: DetectionSet,
    /// Part passes the visibility rule.
    pub visible: [bool; PART_COUNT],
    /// Visible but suppressed by dropout.
    pub dropped: [bool; PART_COUNT],
    /// Noise-free projections.
    pub truth: [Keypoints2; PART_COUNT],
}

fn projected_diagonal(pts: &Keypoints2, in_front: &[bool; KEYPOINT_COUNT]) -> f64 {
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for (p, _) in pts.iter().zip(in_front).filter(|(_, f)| **f) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if lo.x.is_finite() {
        (hi - lo).norm()
    } else {
        0.0
    }
}

/// Row peaked at `class` with mass `confidence`; the rest is split at
/// random over the other classes.
fn peaked_row<R: Rng + ?Sized>(class: usize, confidence: f64, rng: &mut R) -> [f64; CLASS_COUNT] {
    let mut row = [0.0; CLASS_COUNT];
    let spread: [f64; CLASS_COUNT] = std::array::from_fn(|_| rng.random::<f64>() + 1e-3);
    let others: f64 = spread.iter().enumerate().filter(|(j, _)| *j != class).map(|(_, w)| w).sum();
    for j in 0..CLASS_COUNT {
        row[j] = if j == class {
            confidence
        } else {
            (1.0 - confidence) * spread[j] / others
        };
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    row
}

/// Simulates the detector on one frame. Query `j` reports part `j`.
pub fn simulate<R: Rng + ?Sized>(
    scene: &Scene,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Simulation {
    let beta = Beta::new(cfg.confidence_alpha, cfg.confidence_beta).expect("validated Beta parameters");
    let noise = Normal::new(0.0, cfg.pixel_sigma).expect("validated sigma");
    let empty_floor = cfg.confidence_floor.max(NO_OBJECT_MIN_CONFIDENCE);

    let mut probs = [[0.0; CLASS_COUNT]; CLASS_COUNT];
    let mut keypoints = [[Vector2::zeros(); KEYPOINT_COUNT]; CLASS_COUNT];
    let mut visible = [false; PART_COUNT];
    let mut dropped = [false; PART_COUNT];
    let mut truth = [[Vector2::zeros(); KEYPOINT_COUNT]; PART_COUNT];

    for part in scene.parts() {
        let j = part.class_index;
        let kp = project(intr, pose, &part.keypoints);
        truth[j] = kp.pts;
        visible[j] = part_visible(&kp, cfg.min_visible_fraction);

        // Draw every variate unconditionally so that the random stream
        // does not depend on which branch is taken.
        let b = beta.sample(rng);
        let drop_draw: f64 = rng.random();
        let offsets: [Vector2<f64>; KEYPOINT_COUNT] =
            std::array::from_fn(|_| Vector2::new(noise.sample(rng), noise.sample(rng)));

        let too_small = cfg.range_dropout && projected_diagonal(&kp.pts, &kp.in_front) < cfg.min_diagonal_px;
        dropped[j] = visible[j] && (drop_draw < cfg.dropout_prob || too_small);

        probs[j] = if visible[j] && !dropped[j] {
            peaked_row(j, cfg.confidence_floor + (1.0 - cfg.confidence_floor) * b, rng)
        } else {
            peaked_row(NO_OBJECT, empty_floor + (1.0 - empty_floor) * b, rng)
        };
        for k in 0..KEYPOINT_COUNT {
            keypoints[j][k] = if kp.in_front[k] {
                kp.pts[k] + offsets[k]
            } else {
                kp.pts[k]
            };
        }
    }
    // The spare query always reports no object.
    let b = beta.sample(rng);
    probs[NO_OBJECT] = peaked_row(NO_OBJECT, empty_floor + (1.0 - empty_floor) * b, rng);
    keypoints[NO_OBJECT] = [Vector2::new(-1.0, -1.0); KEYPOINT_COUNT];

    Simulation {
        detections: DetectionSet { probs, keypoints },
        visible,
        dropped,
        truth,
    }
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = [false; CLASS_COUNT];
    perm.len() == CLASS_COUNT
        && perm.iter().all(|&p| p < CLASS_COUNT && !std::mem::replace(&mut seen[p], true))
}

/// Reorders queries: output query `i` is input query `perm[i]`.
pub fn misassign(ds: &DetectionSet, perm: &Permutation) -> Result<DetectionSet, DetectorError> {
    if !is_permutation(perm) {
        return Err(DetectorError::NotAPermutation(perm.to_vec()));
    }
    Ok(DetectionSet {
        probs: std::array::from_fn(|i| ds.probs[perm[i]]),
        keypoints: std::array::from_fn(|i| ds.keypoints[perm[i]]),
    })
}

pub fn random_permutation<R: Rng + ?Sized>(rng: &mut R) -> Permutation {
    let mut p: Permutation = std::array::from_fn(|i| i);
    p.shuffle(rng);
    p
}
