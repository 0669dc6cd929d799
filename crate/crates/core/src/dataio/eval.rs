//! Baselines and the horizon-sweep evaluation metric.
//!
//! The metric reports, per prediction horizon, the mean over samples
//! of the summed Euclidean distance between corresponding joint
//! positions of prediction and ground truth. Joint positions come
//! from forward kinematics, so base and angle errors both count in
//! meters.

use crate::error::{Error, Result};
use crate::kinematics::{fk_positions, Skeleton, Trajectory};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Repeats the last observed frame for `horizon` steps.
pub fn zero_velocity_baseline(observed: &Trajectory, horizon: usize) -> Result<Trajectory> {
    let last = observed
        .frames
        .last()
        .ok_or(Error::TooShort { needed: 1, got: 0 })?;
    Trajectory::new(
        observed.frame_rate,
        observed.layout,
        vec![last.clone(); horizon],
    )
}

/// Straight, equally spaced point sequence from `start` to `goal`;
/// the final entry is exactly `goal`.
pub fn interpolation_baseline(
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    horizon: usize,
) -> Vec<Vector3<f64>> {
    let span = goal - start;
    let mut path: Vec<Vector3<f64>> = (1..=horizon)
        .map(|t| start + span * (t as f64 / horizon as f64))
        .collect();
    if let Some(last) = path.last_mut() {
        // Rounding in the lerp must not blur the promised endpoint.
        *last = *goal;
    }
    path
}

/// The horizon grid used for reaching-style evaluations, milliseconds.
pub fn default_horizons_ms() -> Vec<u32> {
    vec![125, 250, 375, 500, 625, 750, 875, 1000]
}

/// The longer grid used for obstacle scenes, milliseconds.
pub fn obstacle_horizons_ms() -> Vec<u32> {
    (1..=8).map(|k| k * 250).collect()
}

/// Milliseconds to a frame index at the given rate, rounding half away
/// from zero. The result is 1-based (a horizon selects the h-th
/// predicted frame) and must be at least 1.
pub fn horizon_frames(ms: u32, frame_rate: f64) -> Result<usize> {
    let frames = (ms as f64 / 1000.0 * frame_rate).round() as usize;
    if frames == 0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {ms} ms is below one frame at {frame_rate} Hz"
        )));
    }
    Ok(frames)
}

/// Mean summed joint-position error per horizon.
///
/// `joints` selects which skeleton joints enter the sum (all key
/// joints for the whole-body metric, a single wrist for the wrist
/// column). Predictions and ground truth must pair up one-to-one and
/// cover the longest horizon.
pub fn evaluate(
    predictions: &[Trajectory],
    truths: &[Trajectory],
    skel: &Skeleton,
    joints: &[usize],
    horizons_ms: &[u32],
) -> Result<Vec<f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions against {} ground-truth trajectories",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument(
            "nothing to evaluate: no samples".into(),
        ));
    }
    if joints.is_empty() {
        return Err(Error::InvalidArgument("no joints selected".into()));
    }
    for &j in joints {
        if j >= skel.n_joints() {
            return Err(Error::Skeleton(format!(
                "joint index {j} out of range for a {}-joint skeleton",
                skel.n_joints()
            )));
        }
    }

    let mut totals = vec![0.0; horizons_ms.len()];
    for (pred, truth) in predictions.iter().zip(truths) {
        if (pred.frame_rate - truth.frame_rate).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "frame rate mismatch: prediction {} Hz, ground truth {} Hz",
                pred.frame_rate, truth.frame_rate
            )));
        }
        for (hi, &ms) in horizons_ms.iter().enumerate() {
            let h = horizon_frames(ms, pred.frame_rate)?;
            if h > pred.len() || h > truth.len() {
                return Err(Error::TooShort {
                    needed: h,
                    got: pred.len().min(truth.len()),
                });
            }
            let fp = fk_positions(skel, &pred.frames[h - 1])?;
            let ft = fk_positions(skel, &truth.frames[h - 1])?;
            totals[hi] += joints
                .iter()
                .map(|&j| (fp.positions[j] - ft.positions[j]).norm())
                .sum::<f64>();
        }
    }
    let n = predictions.len() as f64;
    Ok(totals.into_iter().map(|v| v / n).collect())
}

/// A labeled table of per-horizon errors, one row per method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizons_ms: Vec<u32>,
    pub rows: Vec<EvalRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub errors_m: Vec<f64>,
}

impl EvalReport {
    pub fn new(horizons_ms: Vec<u32>) -> Self {
        EvalReport {
            horizons_ms,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, method: &str, errors_m: Vec<f64>) -> Result<()> {
        if errors_m.len() != self.horizons_ms.len() {
            return Err(Error::Dimension {
                context: "EvalReport row",
                expected: self.horizons_ms.len(),
                actual: errors_m.len(),
            });
        }
        self.rows.push(EvalRow {
            method: method.to_owned(),
            errors_m,
        });
        Ok(())
    }

    /// CSV rendering: methods down, horizons across, cells in meters
    /// with two decimals.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("method");
        for ms in &self.horizons_ms {
            out.push_str(&format!(",{ms}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.method);
            for v in &row.errors_m {
                out.push_str(&format!(",{v:.2}"));
            }
            out.push('\n');
        }
        out
    }
}
