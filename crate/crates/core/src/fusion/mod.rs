//! Fusion of per-part pose estimates into one camera pose with position
//! covariance and attitude uncertainty.
//!
//! Each surviving part contributes the camera pose it implies in the base
//! frame, `C_i = −R_iᵀ t_i` and attitude `R_iᵀ`, so the fused mean and both
//! covariances are directly comparable with the true camera pose.

pub mod matrix_fisher;

pub use matrix_fisher::{angle_cdf, angle_quantile, d_from_s, s_from_d, AngleUq};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pnp::PartPoseEstimate;
use crate::sampler::CameraPose;
use crate::so3::{log_so3, proper_svd, ProperSvd, Rotation};

pub const DEFAULT_GATE: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("no estimate passed the confidence gate")]
    NoInliers,
    #[error("{0}")]
    Domain(String),
    #[error("{0} inputs but {1} weights")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceModel {
    /// Weighted spread of the part attitudes about the mean.
    Empirical,
    /// Closed form from the singular values, valid when highly concentrated.
    Concentrated,
}

/// Which singular value of `E[R]` stands in for the scalar `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarD {
    D1,
    D2,
    D3,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Estimates with confidence at or below this are discarded.
    pub gate: f64,
    pub covariance: CovarianceModel,
    pub scalar_d: ScalarD,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            gate: DEFAULT_GATE,
            covariance: CovarianceModel::Empirical,
            scalar_d: ScalarD::D3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPose {
    /// Fused camera position.
    pub mu_t: Vector3<f64>,
    pub sigma_t: Matrix3<f64>,
    /// Fused camera attitude `U Vᵀ`.
    pub mu_r: Rotation,
    /// Proper SVD of the weighted mean attitude matrix.
    pub svd: ProperSvd,
    /// Attitude covariance selected by the config.
    pub sigma_eta: Matrix3<f64>,
    pub covariance: CovarianceModel,
    /// The concentrated form had negative entries that were set to zero.
    pub concentrated_clamped: bool,
    pub n_inliers: usize,
    pub classes: Vec<usize>,
    pub weights: Vec<f64>,
    /// Per-part camera positions that entered the fusion.
    pub part_positions: Vec<Vector3<f64>>,
}

impl FusedPose {
    pub fn camera_pose(&self) -> CameraPose {
        CameraPose {
            position: self.mu_t,
            attitude: self.mu_r,
        }
    }

    pub fn scalar_d(&self, which: ScalarD) -> f64 {
        let d = self.svd.d;
        match which {
            ScalarD::D1 => d[0],
            ScalarD::D2 => d[1],
            ScalarD::D3 => d[2],
            ScalarD::Mean => d.mean(),
        }
    }

    /// Angle uncertainty from the chosen scalar `d`, or `None` when all
    /// parts agree exactly (`d = 1`).
    pub fn angle_uq(&self, which: ScalarD) -> Result<Option<AngleUq>, FusionError> {
        let d = self.scalar_d(which).max(0.0);
        if d >= 1.0 {
            return Ok(None);
        }
        AngleUq::from_d(d).map(Some)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// Indices of estimates with confidence strictly above `gate`, and their
/// softmax weights.
pub fn gate_and_weight(estimates: &[PartPoseEstimate], gate: f64) -> Result<(Vec<usize>, Vec<f64>), FusionError> {
    let kept: Vec<usize> = (0..estimates.len()).filter(|&i| estimates[i].confidence > gate).collect();
    if kept.is_empty() {
        return Err(FusionError::NoInliers);
    }
    let conf: Vec<f64> = kept.iter().map(|&i| estimates[i].confidence).collect();
    Ok((kept, softmax(&conf)))
}

fn check_lengths(n: usize, w: &[f64]) -> Result<(), FusionError> {
    if n == w.len() && n > 0 {
        Ok(())
    } else {
        Err(FusionError::LengthMismatch(n, w.len()))
    }
}

/// Weighted mean and covariance.
pub fn fuse_position(t: &[Vector3<f64>], w: &[f64]) -> Result<(Vector3<f64>, Matrix3<f64>), FusionError> {
    check_lengths(t.len(), w)?;
    let mu: Vector3<f64> = t.iter().zip(w).map(|(ti, wi)| ti * *wi).sum();
    let sigma = t
        .iter()
        .zip(w)
        .map(|(ti, wi)| {
            let d = ti - mu;
            d * d.transpose() * *wi
        })
        .sum();
    Ok((mu, sigma))
}

/// Weighted first moment of the rotations and its closest rotation.
pub fn fuse_attitude(r: &[Rotation], w: &[f64]) -> Result<(Rotation, ProperSvd), FusionError> {
    check_lengths(r.len(), w)?;
    let mean: Matrix3<f64> = r.iter().zip(w).map(|(ri, wi)| ri.matrix() * *wi).sum();
    let svd = proper_svd(&mean);
    if svd.d[1] <= 0.0 {
        log::warn!("mean attitude matrix is rank deficient (d = {:?})", svd.d.as_slice());
    }
    Ok((svd.rotation(), svd))
}

/// Entries above this are rounding noise around zero and are clamped
/// silently.
const CLAMP_ROUNDOFF: f64 = -1e-12;

/// Diagonal covariance implied by the singular values in the concentrated
/// limit. Negative entries are set to zero; ones beyond rounding are
/// reported.
pub fn sigma_eta_concentrated(d: &Vector3<f64>) -> (Matrix3<f64>, bool) {
    let diag = Vector3::new(
        1.0 + d[0] - d[1] - d[2],
        1.0 - d[0] + d[1] - d[2],
        1.0 - d[0] - d[1] + d[2],
    );
    let clamped = diag.iter().any(|&x| x < CLAMP_ROUNDOFF);
    if clamped {
        log::warn!("concentrated attitude covariance {:?} has negative entries; clamping", diag.as_slice());
    }
    (Matrix3::from_diagonal(&diag.map(|x| x.max(0.0))), clamped)
}

/// `Σ wᵢ ηᵢ ηᵢᵀ` with `ηᵢ = log(Uᵀ Rᵢ V)`.
pub fn sigma_eta_empirical(r: &[Rotation], w: &[f64], u: &Rotation, v: &Rotation) -> Result<Matrix3<f64>, FusionError> {
    check_lengths(r.len(), w)?;
    let ut = u.transpose();
    Ok(r.iter()
        .zip(w)
        .map(|(ri, wi)| {
            let eta = log_so3(&(ut * *ri * *v));
            eta * eta.transpose() * *wi
        })
        .sum())
}

/// Gate, weight and fuse the per-part estimates of one frame.
pub fn fuse(estimates: &[PartPoseEstimate], cfg: &FusionConfig) -> Result<FusedPose, FusionError> {
    let (kept, weights) = gate_and_weight(estimates, cfg.gate)?;
    let poses: Vec<CameraPose> = kept.iter().map(|&i| estimates[i].camera_pose()).collect();
    let positions: Vec<Vector3<f64>> = poses.iter().map(|p| p.position).collect();
    let attitudes: Vec<Rotation> = poses.iter().map(|p| p.attitude).collect();

    let (mu_t, sigma_t) = fuse_position(&positions, &weights)?;
    let (mu_r, svd) = fuse_attitude(&attitudes, &weights)?;
    let (concentrated, concentrated_clamped) = sigma_eta_concentrated(&svd.d);
    let sigma_eta = match cfg.covariance {
        CovarianceModel::Empirical => sigma_eta_empirical(&attitudes, &weights, &svd.u, &svd.v)?,
        CovarianceModel::Concentrated => concentrated,
    };
    Ok(FusedPose {
        mu_t,
        sigma_t,
        mu_r,
        svd,
        sigma_eta,
        covariance: cfg.covariance,
        concentrated_clamped,
        n_inliers: kept.len(),
        classes: kept.iter().map(|&i| estimates[i].class_index).collect(),
        weights,
        part_positions: positions,
    })
}
