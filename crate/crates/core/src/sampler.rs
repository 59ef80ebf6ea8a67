//! Camera-pose sampling: spherical positions for the camera and the point it
//! looks at, a level look-at attitude, and a random roll about the line of
//! sight.
//!
//! Spherical coordinates `(r, θ, φ)` map to the base frame as
//! `r (cos φ cos θ, cos φ sin θ, sin φ)`: θ is measured from starboard (+x)
//! toward the bow (+y) and φ is the elevation above the deck plane.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6, PI};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use thiserror::Error;

use crate::rng::{stream_rng, Purpose};
use crate::so3::{exp_so3, Rotation};

const MAX_REJECTIONS: usize = 100;
const DEGENERATE_LOOK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("truncated normal needs lo < hi and std > 0 (got mean {mean}, std {std}, [{lo}, {hi}])")]
    InvalidTruncation { mean: f64, std: f64, lo: f64, hi: f64 },
    #[error("look direction is degenerate (camera and focus coincide or view is vertical)")]
    DegenerateLookDirection,
    #[error("gave up after {0} degenerate camera/focus pairs")]
    TooManyRejections(usize),
    #[error("invalid angular range [{0}, {1}]")]
    InvalidRange(f64, f64),
}

/// A position and attitude of the camera. `attitude` maps camera-frame
/// vectors into the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub attitude: Rotation,
}

impl CameraPose {
    /// Base→camera rotation and translation, `p_c = R p + t`.
    pub fn to_extrinsics(&self) -> (Rotation, Vector3<f64>) {
        let r_bc = self.attitude.transpose();
        let t = -(r_bc * self.position);
        (r_bc, t)
    }

    pub fn from_extrinsics(r_bc: &Rotation, t: &Vector3<f64>) -> Self {
        let attitude = r_bc.transpose();
        CameraPose {
            position: -(attitude * *t),
            attitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalSample {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalSample {
    pub fn to_cartesian(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(cp * ct, cp * st, sp) * self.r
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_quantile(p: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // One Newton polish; erfc_inv alone is good to about 1e-11.
    let pdf = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    if pdf > 0.0 && z.is_finite() {
        z - (std_normal_cdf(z) - p) / pdf
    } else {
        z
    }
}

/// Normal distribution restricted to `[lo, hi]` and renormalized; sampled
/// by inverting its CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mean: f64,
    std: f64,
    lo: f64,
    hi: f64,
    // Standardized bounds in the orientation used for inversion. When the
    // whole interval lies above the mean we work with the mirror image so
    // that both CDF values stay away from 1.
    flipped: bool,
    cdf_a: f64,
    cdf_b: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, std: f64, lo: f64, hi: f64) -> Result<Self, SamplerError> {
        if !(std > 0.0 && lo < hi && mean.is_finite() && std.is_finite()) {
            return Err(SamplerError::InvalidTruncation { mean, std, lo, hi });
        }
        let alpha = (lo - mean) / std;
        let beta = (hi - mean) / std;
        let flipped = alpha > 0.0;
        let (a, b) = if flipped { (-beta, -alpha) } else { (alpha, beta) };
        Ok(TruncatedNormal {
            mean,
            std,
            lo,
            hi,
            flipped,
            cdf_a: std_normal_cdf(a),
            cdf_b: std_normal_cdf(b),
        })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let z = (x - self.mean) / self.std;
        let mass = self.cdf_b - self.cdf_a;
        if self.flipped {
            ((self.cdf_b - std_normal_cdf(-z)) / mass).clamp(0.0, 1.0)
        } else {
            ((std_normal_cdf(z) - self.cdf_a) / mass).clamp(0.0, 1.0)
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let u = if self.flipped { 1.0 - u } else { u };
        let p = self.cdf_a + u * (self.cdf_b - self.cdf_a);
        let z = std_normal_quantile(p);
        let x = if self.flipped {
            self.mean - self.std * z
        } else {
            self.mean + self.std * z
        };
        x.clamp(self.lo, self.hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random())
    }
}

/// Samples a point from uniform azimuth, uniform elevation and a truncated
/// normal radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalSampler {
    pub theta: (f64, f64),
    pub phi: (f64, f64),
    pub radius: TruncatedNormal,
}

impl SphericalSampler {
    pub fn sample_spherical<R: Rng + ?Sized>(&self, rng: &mut R) -> SphericalSample {
        let theta = uniform(rng, self.theta);
        let phi = uniform(rng, self.phi);
        let r = self.radius.sample(rng);
        SphericalSample { r, theta, phi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        self.sample_spherical(rng).to_cartesian()
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusParams {
    pub mean: f64,
    pub std: f64,
}

/// Pose-sampling configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Maximum camera range.
    #[serde(rename = "L_max")]
    pub l_max: f64,
    /// Maximum camera elevation above the deck.
    pub phi_max: f64,
    /// Roll half-range about the line of sight.
    pub psi_max: f64,
    pub camera_radius: RadiusParams,
    pub focus_radius: RadiusParams,
    pub focus_max: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            l_max: 25.0,
            phi_max: FRAC_PI_3,
            psi_max: FRAC_PI_6,
            camera_radius: RadiusParams { mean: 1.0, std: 40.0 },
            focus_radius: RadiusParams { mean: 0.0, std: 1.0 },
            focus_max: 15.0,
            seed: 0,
        }
    }
}

/// Draws independent camera positions `C`, focus points `F` and rolls `ψ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSampler {
    pub camera: SphericalSampler,
    pub focus: SphericalSampler,
    pub psi_max: f64,
}

impl PoseSampler {
    pub fn new(cfg: &SamplerConfig) -> Result<Self, SamplerError> {
        if !(cfg.phi_max >= 0.0 && cfg.phi_max <= FRAC_PI_2) {
            return Err(SamplerError::InvalidRange(0.0, cfg.phi_max));
        }
        if !(cfg.psi_max >= 0.0 && cfg.psi_max < PI) {
            return Err(SamplerError::InvalidRange(-cfg.psi_max, cfg.psi_max));
        }
        Ok(PoseSampler {
            camera: SphericalSampler {
                theta: (-PI, 0.0),
                phi: (0.0, cfg.phi_max),
                radius: TruncatedNormal::new(cfg.camera_radius.mean, cfg.camera_radius.std, 0.0, cfg.l_max)?,
            },
            focus: SphericalSampler {
                theta: (0.0, 2.0 * PI),
                phi: (-FRAC_PI_2, FRAC_PI_2),
                radius: TruncatedNormal::new(cfg.focus_radius.mean, cfg.focus_radius.std, 0.0, cfg.focus_max)?,
            },
            psi_max: cfg.psi_max,
        })
    }

    pub fn sample_camera_position<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        self.camera.sample(rng)
    }

    pub fn sample_focus_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        self.focus.sample(rng)
    }

    pub fn sample_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CameraPose, SamplerError> {
        for _ in 0..MAX_REJECTIONS {
            let c = self.sample_camera_position(rng);
            let f = self.sample_focus_point(rng);
            let psi = uniform(rng, (-self.psi_max, self.psi_max));
            match lookat_attitude(&c, &f, psi) {
                Ok(attitude) => return Ok(CameraPose { position: c, attitude }),
                Err(SamplerError::DegenerateLookDirection) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(SamplerError::TooManyRejections(MAX_REJECTIONS))
    }

    /// `n` poses; pose `i` comes from its own stream so the set is
    /// independent of how it is partitioned across workers.
    pub fn sample_poses(&self, seed: u64, n: usize) -> Result<Vec<CameraPose>, SamplerError> {
        (0..n)
            .map(|i| self.sample_pose(&mut stream_rng(seed, Purpose::Poses, i as u64)))
            .collect()
    }
}

/// Attitude whose third axis points from `f` back to `c`, whose first axis
/// is level, then rolled by `psi` about its third axis.
pub fn lookat_attitude(c: &Vector3<f64>, f: &Vector3<f64>, psi: f64) -> Result<Rotation, SamplerError> {
    let sight = f - c;
    let len = sight.norm();
    if !(len > DEGENERATE_LOOK) {
        return Err(SamplerError::DegenerateLookDirection);
    }
    let r3 = -sight / len;
    let r1 = Vector3::z().cross(&r3);
    let n1 = r1.norm();
    if n1 < DEGENERATE_LOOK {
        return Err(SamplerError::DegenerateLookDirection);
    }
    let r1 = r1 / n1;
    let r2 = r3.cross(&r1);
    let level = Rotation::from_columns_unchecked(r1, r2, r3);
    Ok(level * exp_so3(&(Vector3::z() * psi)))
}

/// Roll of an attitude relative to its level look-at frame.
pub fn extract_roll(attitude: &Rotation) -> f64 {
    let r3 = attitude.column(2);
    let r1 = Vector3::z().cross(&r3).normalize();
    let r2 = r3.cross(&r1);
    let x = attitude.column(0);
    x.dot(&r2).atan2(x.dot(&r1))
}
