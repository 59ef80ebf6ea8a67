//! File formats: pose CSV (sampled or replayed trajectories), per-frame
//! detection / estimate / fused-pose JSON, and a per-frame error CSV.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FrameInput, FrameRecord};
use crate::detector::DetectionSet;
use crate::fusion::FusedPose;
use crate::pnp::PartPoseEstimate;
use crate::sampler::CameraPose;
use crate::scene::KEYPOINT_COUNT;
use crate::so3::Rotation;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

const ROTATION_COLUMNS: [&str; 9] = ["r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22"];
const ROW_TOLERANCE: f64 = 1e-6;

/// Writes `frame_id,[timestamp,]cx,cy,cz,r00..r22`; the timestamp column
/// appears when any frame carries one.
pub fn write_poses_csv<W: Write>(out: W, frames: &[FrameInput]) -> Result<(), IoError> {
    let stamped = frames.iter().any(|f| f.timestamp.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["frame_id"];
    if stamped {
        header.push("timestamp");
    }
    header.extend(["cx", "cy", "cz"]);
    header.extend(ROTATION_COLUMNS);
    w.write_record(&header)?;
    for f in frames {
        let mut row = vec![f.frame_id.to_string()];
        if stamped {
            row.push(f.timestamp.map(|t| t.to_string()).unwrap_or_default());
        }
        row.extend(f.pose.position.iter().map(|v| v.to_string()));
        row.extend(f.pose.attitude.to_row_major().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the format of [`write_poses_csv`]. Rotations that are off by
/// more than rounding are rejected.
pub fn read_poses_csv<R: Read>(input: R) -> Result<Vec<FrameInput>, IoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| IoError::Invalid {
        line: 1,
        message: format!("missing column {name:?}"),
    };
    let id_col = col("frame_id").ok_or_else(|| missing("frame_id"))?;
    let ts_col = col("timestamp");
    let pos_cols: Vec<usize> = ["cx", "cy", "cz"]
        .iter()
        .map(|c| col(c).ok_or_else(|| missing(c)))
        .collect::<Result<_, _>>()?;
    let rot_cols: Vec<usize> = ROTATION_COLUMNS
        .iter()
        .map(|c| col(c).ok_or_else(|| missing(c)))
        .collect::<Result<_, _>>()?;

    let mut frames = vec![];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |message: String| IoError::Invalid { line, message };
        let num = |c: usize| -> Result<f64, IoError> {
            rec.get(c)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", headers.get(c).unwrap_or("?"))))
        };
        let frame_id = rec
            .get(id_col)
            .unwrap_or_default()
            .parse::<usize>()
            .map_err(|e| bad(format!("frame_id: {e}")))?;
        let timestamp = match ts_col.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<f64>().map_err(|e| bad(format!("timestamp: {e}")))?),
            None => None,
        };
        let position = Vector3::new(num(pos_cols[0])?, num(pos_cols[1])?, num(pos_cols[2])?);
        let mut rm = [0.0; 9];
        for (k, &c) in rot_cols.iter().enumerate() {
            rm[k] = num(c)?;
        }
        let m = Matrix3::from_row_slice(&rm);
        if !crate::so3::is_rotation(&m, ROW_TOLERANCE) {
            return Err(bad("attitude is not a rotation matrix".into()));
        }
        let attitude = Rotation::from_matrix(m).map_err(|e| bad(e.to_string()))?;
        frames.push(FrameInput {
            frame_id,
            timestamp,
            pose: CameraPose { position, attitude },
        });
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: usize,
    #[serde(flatten)]
    pub detections: DetectionSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub class_index: usize,
    pub confidence: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub inliers: usize,
    pub reproj_px: f64,
    pub inlier_mask: [bool; KEYPOINT_COUNT],
}

impl From<&PartPoseEstimate> for EstimateEntry {
    fn from(e: &PartPoseEstimate) -> Self {
        EstimateEntry {
            class_index: e.class_index,
            confidence: e.confidence,
            r: e.rotation.to_row_major(),
            t: [e.translation.x, e.translation.y, e.translation.z],
            inliers: e.inlier_count(),
            reproj_px: e.reproj_error,
            inlier_mask: e.inliers,
        }
    }
}

impl EstimateEntry {
    pub fn to_estimate(&self) -> Result<PartPoseEstimate, crate::so3::So3Error> {
        Ok(PartPoseEstimate {
            class_index: self.class_index,
            rotation: Rotation::from_row_major(&self.r)?,
            translation: Vector3::from(self.t),
            confidence: self.confidence,
            inliers: self.inlier_mask,
            reproj_error: self.reproj_px,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub frame_id: usize,
    pub parts: Vec<EstimateEntry>,
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    std::array::from_fn(|k| m[(k / 3, k % 3)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub frame_id: usize,
    pub mu_t: [f64; 3],
    pub sigma_t: [f64; 9],
    pub mu_r: [f64; 9],
    pub d: [f64; 3],
    pub sigma_eta: [f64; 9],
    pub n_inliers: usize,
    pub weights: Vec<f64>,
}

/// A fused pose, or an explicit gap when nothing survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FusedRecord {
    Fused(FusedEntry),
    Gap { frame_id: usize, gap: bool },
}

impl FusedRecord {
    pub fn new(frame_id: usize, fused: Option<&FusedPose>) -> Self {
        match fused {
            Some(f) => FusedRecord::Fused(FusedEntry {
                frame_id,
                mu_t: [f.mu_t.x, f.mu_t.y, f.mu_t.z],
                sigma_t: row_major(&f.sigma_t),
                mu_r: f.mu_r.to_row_major(),
                d: [f.svd.d[0], f.svd.d[1], f.svd.d[2]],
                sigma_eta: row_major(&f.sigma_eta),
                n_inliers: f.n_inliers,
                weights: f.weights.clone(),
            }),
            None => FusedRecord::Gap { frame_id, gap: true },
        }
    }
}

pub fn write_json<T: Serialize, W: Write>(mut out: W, value: &T) -> Result<(), IoError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<T, IoError> {
    Ok(serde_json::from_reader(input)?)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per frame for external plotting; gap frames have empty error
/// fields.
pub fn write_frames_csv<W: Write>(out: W, records: &[FrameRecord]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "frame_id", "timestamp", "range", "fused", "n_visible", "n_inliers", "pos_error", "ex", "ey", "ez",
        "sig_x", "sig_y", "sig_z", "rot_error_deg", "eta_x", "eta_y", "eta_z", "sig_eta_x", "sig_eta_y",
        "sig_eta_z", "loss",
    ])?;
    for r in records {
        let f = r.fused.as_ref();
        let comp = |v: Option<Vector3<f64>>, k: usize| opt(v.map(|v| v[k]));
        let sd = |m: Option<Matrix3<f64>>, k: usize| opt(m.map(|m| m[(k, k)].max(0.0).sqrt()));
        let sigma_t = f.map(|f| f.sigma_t);
        let sigma_eta = f.map(|f| f.sigma_eta);
        w.write_record([
            r.frame_id.to_string(),
            opt(r.timestamp),
            r.range.to_string(),
            u8::from(f.is_some()).to_string(),
            r.n_visible.to_string(),
            f.map(|f| f.n_inliers).unwrap_or(0).to_string(),
            opt(r.pos_error),
            comp(r.pos_error_vec, 0),
            comp(r.pos_error_vec, 1),
            comp(r.pos_error_vec, 2),
            sd(sigma_t, 0),
            sd(sigma_t, 1),
            sd(sigma_t, 2),
            opt(r.rot_error.map(f64::to_degrees)),
            comp(r.eta, 0),
            comp(r.eta, 1),
            comp(r.eta, 2),
            sd(sigma_eta, 0),
            sd(sigma_eta, 1),
            sd(sigma_eta, 2),
            r.loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
