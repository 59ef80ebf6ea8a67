use serde::{Deserialize, Serialize};

use super::FrameRecord;
use crate::fusion::ScalarD;
use crate::scene::{Scene, PART_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRow {
    pub class_index: usize,
    pub name: String,
    /// Frames where the part survived the gate.
    pub n_frames: usize,
    pub n_excluded: usize,
    /// The part never survived the gate.
    pub absent: bool,
    pub mae_pos: Option<f64>,
    pub max_pos: Option<f64>,
    pub median_pos: Option<f64>,
    pub mae_rot_deg: Option<f64>,
    pub max_rot_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub n_frames: usize,
    /// Fraction of fused frames whose position error lies inside the 3σ
    /// box on every axis.
    pub position: Option<f64>,
    /// Same for the attitude error in the fused covariance's coordinates.
    pub rotation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_frames: usize,
    pub n_fused: usize,
    pub n_gaps: usize,
    pub max_range_l: f64,
    pub mae_pos: Option<f64>,
    pub max_pos: Option<f64>,
    pub median_pos: Option<f64>,
    /// `100 · mae_pos / max_range_l`.
    pub mae_over_l: Option<f64>,
    pub mae_rot_deg: Option<f64>,
    pub max_rot_deg: Option<f64>,
    pub median_rot_deg: Option<f64>,
    /// Mean over fused frames of `√tr Σ_t`.
    pub sigma_pos: Option<f64>,
    /// Mean over fused frames of `√tr Σ_η`, degrees.
    pub sigma_rot_deg: Option<f64>,
    pub mean_d: Option<f64>,
    pub coverage_3sigma: Coverage,
    pub mean_loss: Option<f64>,
    pub per_part: Vec<PartRow>,
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

fn max(x: &[f64]) -> Option<f64> {
    x.iter().copied().reduce(f64::max)
}

pub(crate) fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Single-part error rows: each class over the frames where it survived the
/// gate.
pub fn ablate_single_object(records: &[FrameRecord], scene: &Scene) -> Vec<PartRow> {
    (0..PART_COUNT)
        .map(|class| {
            let hits: Vec<(f64, f64)> = records
                .iter()
                .filter_map(|r| {
                    r.part_errors
                        .iter()
                        .find(|e| e.class_index == class && e.gated_in)
                        .map(|e| (e.pos_error, e.rot_error.to_degrees()))
                })
                .collect();
            let pos: Vec<f64> = hits.iter().map(|h| h.0).collect();
            let rot: Vec<f64> = hits.iter().map(|h| h.1).collect();
            PartRow {
                class_index: class,
                name: scene.part(class).name.clone(),
                n_frames: hits.len(),
                n_excluded: records.len() - hits.len(),
                absent: hits.is_empty(),
                mae_pos: mean(&pos),
                max_pos: max(&pos),
                median_pos: median(&pos),
                mae_rot_deg: mean(&rot),
                max_rot_deg: max(&rot),
            }
        })
        .collect()
}

/// 3σ-box coverage over fused frames with both covariances scaled by
/// `inflation`.
pub fn coverage_3sigma(records: &[FrameRecord], inflation: f64) -> Coverage {
    let mut n = 0;
    let (mut pos_in, mut rot_in) = (0, 0);
    for r in records {
        let (Some(f), Some(e), Some(eta)) = (&r.fused, &r.pos_error_vec, &r.eta) else { continue };
        n += 1;
        let inside = |err: f64, var: f64| err.abs() <= 3.0 * (inflation * var.max(0.0)).sqrt();
        if (0..3).all(|k| inside(e[k], f.sigma_t[(k, k)])) {
            pos_in += 1;
        }
        if (0..3).all(|k| inside(eta[k], f.sigma_eta[(k, k)])) {
            rot_in += 1;
        }
    }
    Coverage {
        n_frames: n,
        position: (n > 0).then(|| pos_in as f64 / n as f64),
        rotation: (n > 0).then(|| rot_in as f64 / n as f64),
    }
}

pub fn build_report(records: &[FrameRecord], scene: &Scene, max_range_l: f64, scalar_d: ScalarD) -> Report {
    let fused: Vec<&FrameRecord> = records.iter().filter(|r| !r.is_gap()).collect();
    let pos: Vec<f64> = fused.iter().filter_map(|r| r.pos_error).collect();
    let rot: Vec<f64> = fused.iter().filter_map(|r| r.rot_error.map(f64::to_degrees)).collect();
    let sig_t: Vec<f64> = fused.iter().filter_map(|r| r.fused.as_ref()).map(|f| f.sigma_t.trace().max(0.0).sqrt()).collect();
    let sig_r: Vec<f64> = fused
        .iter()
        .filter_map(|r| r.fused.as_ref())
        .map(|f| f.sigma_eta.trace().max(0.0).sqrt().to_degrees())
        .collect();
    let d: Vec<f64> = fused.iter().filter_map(|r| r.fused.as_ref()).map(|f| f.scalar_d(scalar_d)).collect();
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let mae_pos = mean(&pos);
    Report {
        n_frames: records.len(),
        n_fused: fused.len(),
        n_gaps: records.len() - fused.len(),
        max_range_l,
        mae_pos,
        max_pos: max(&pos),
        median_pos: median(&pos),
        mae_over_l: mae_pos.map(|m| 100.0 * m / max_range_l),
        mae_rot_deg: mean(&rot),
        max_rot_deg: max(&rot),
        median_rot_deg: median(&rot),
        sigma_pos: mean(&sig_t),
        sigma_rot_deg: mean(&sig_r),
        mean_d: mean(&d),
        coverage_3sigma: coverage_3sigma(records, 1.0),
        mean_loss: mean(&losses),
        per_part: ablate_single_object(records, scene),
    }
}
