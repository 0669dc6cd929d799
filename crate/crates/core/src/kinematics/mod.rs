//! Rotation parameterizations, articulated state, and trajectories.
//!
//! Rotations travel in two forms: a three-component exponential map
//! (axis times angle, canonical norm in `[0, pi]`) used for storage and
//! network state, and unit quaternions used for loss computation. The
//! conversions here are hand-rolled so their Jacobians (see [`fk`])
//! stay consistent with the forward code; tests cross-check both
//! directions against nalgebra.
//!
//! World frame convention throughout the crate: x forward, y left,
//! z up, distances in meters.

mod fk;
mod skeleton;

pub use fk::{dquat_dexpmap, fk_positions, fk_vjp, left_jacobian, rotmat, FkCache};
pub use skeleton::{Joint, Skeleton};

use crate::error::{check_dim, Error, Result};
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

/// Angle threshold below which trig ratios switch to their Taylor
/// series. At 1e-4 rad the truncation error of the retained terms is
/// below 1e-17, well under round-trip tolerances.
pub(crate) const SMALL_ANGLE: f64 = 1e-4;

/// Largest acceptable deviation from unit norm for incoming quaternions.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// Exponential-map rotation: axis scaled by angle, with the angle kept
/// in `[0, pi]`. Construction re-wraps larger angles onto the
/// equivalent short rotation (flipping the axis when needed), so two
/// `ExpMap`s describing the same rotation compare equal up to floating
/// point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpMap(Vector3<f64>);

impl ExpMap {
    pub fn new(v: Vector3<f64>) -> Self {
        let theta = v.norm();
        if theta <= std::f64::consts::PI {
            return ExpMap(v);
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let wrapped = theta - two_pi * (theta / two_pi).floor();
        let scale = if wrapped <= std::f64::consts::PI {
            wrapped / theta
        } else {
            (wrapped - two_pi) / theta
        };
        ExpMap(v * scale)
    }

    pub fn identity() -> Self {
        ExpMap(Vector3::zeros())
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// Quaternion in (w, x, y, z) order. Kept unit-norm by the conversion
/// routines; `q` and `-q` denote the same rotation and every consumer
/// in this crate treats them as equivalent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub fn identity() -> Self {
        Quat {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// The negated quaternion. Denotes the same rotation; useful when a
    /// caller needs the representative closest to some reference.
    pub fn neg(&self) -> Quat {
        Quat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// Exponential map to unit quaternion: `(cos(theta/2), sin(theta/2) * axis)`.
/// Exact at the identity thanks to the series branch.
pub fn expmap_to_quat(e: &ExpMap) -> Quat {
    quat_from_coords(&e.vector())
}

/// The same conversion on raw rotation coordinates, without the
/// canonical wrapping an [`ExpMap`] applies. Differentiable everywhere
/// and consistent with [`dquat_dexpmap`](crate::kinematics::dquat_dexpmap),
/// which makes it the right entry point for loss terms that are
/// differentiated in the raw coordinates.
pub fn quat_from_coords(v: &Vector3<f64>) -> Quat {
    let theta = v.norm();
    let half = 0.5 * theta;
    // sin(theta/2) / theta, continuous through theta = 0.
    let k = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        0.5 - t2 / 48.0 + t2 * t2 / 3840.0
    } else {
        half.sin() / theta
    };
    Quat {
        w: half.cos(),
        x: k * v.x,
        y: k * v.y,
        z: k * v.z,
    }
}

/// Unit quaternion to canonical exponential map. Rejects inputs whose
/// norm is off unit by more than [`QUAT_NORM_TOL`]; smaller deviations
/// are normalized away. `q` and `-q` map to the same result.
pub fn quat_to_expmap(q: &Quat) -> Result<ExpMap> {
    let n = q.norm();
    let deviation = (n - 1.0).abs();
    if deviation > QUAT_NORM_TOL {
        return Err(Error::NotUnitQuaternion {
            deviation,
            tolerance: QUAT_NORM_TOL,
        });
    }
    let q = if q.w < 0.0 { q.neg() } else { *q };
    let (w, vx, vy, vz) = (q.w / n, q.x / n, q.y / n, q.z / n);
    let vn = (vx * vx + vy * vy + vz * vz).sqrt();
    let theta = 2.0 * vn.atan2(w);
    let scale = if vn < 1e-12 { 2.0 } else { theta / vn };
    Ok(ExpMap::new(Vector3::new(vx, vy, vz) * scale))
}

/// Hamilton product `a * b` (apply `b`, then `a`).
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    Quat {
        w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    }
}

/// Sign-invariant quaternion distance `min(|a - b|, |a + b|)` used as
/// the rotation term of the training loss. Zero for `a == b` and for
/// `a == -b`; `sqrt(2)` between the unit w and unit x quaternions.
pub fn quat_loss_pair(a: &Quat, b: &Quat) -> f64 {
    let d = |p: &Quat, q: &Quat| {
        let (dw, dx, dy, dz) = (p.w - q.w, p.x - q.x, p.y - q.y, p.z - q.z);
        (dw * dw + dx * dx + dy * dy + dz * dz).sqrt()
    };
    d(a, b).min(d(a, &b.neg()))
}

/// Full-body configuration: base position, base orientation, and one
/// exponential map per skeleton joint. Flattens to
/// `[base_pos, base_rot, joint_0, .., joint_{J-1}]`, 6 + 3J values;
/// the default 20-joint skeleton gives 66.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanState {
    pub base_pos: Vector3<f64>,
    pub base_rot: ExpMap,
    pub joints: Vec<ExpMap>,
}

impl HumanState {
    pub fn rest(n_joints: usize) -> Self {
        HumanState {
            base_pos: Vector3::zeros(),
            base_rot: ExpMap::identity(),
            joints: vec![ExpMap::identity(); n_joints],
        }
    }

    pub fn dim(&self) -> usize {
        6 + 3 * self.joints.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        out.fixed_rows_mut::<3>(0).copy_from(&self.base_pos);
        out.fixed_rows_mut::<3>(3).copy_from(&self.base_rot.vector());
        for (i, j) in self.joints.iter().enumerate() {
            out.fixed_rows_mut::<3>(6 + 3 * i).copy_from(&j.vector());
        }
        out
    }

    pub fn from_vector(v: &DVector<f64>, n_joints: usize) -> Result<Self> {
        check_dim("HumanState::from_vector", 6 + 3 * n_joints, v.len())?;
        Ok(HumanState {
            base_pos: v.fixed_rows::<3>(0).into(),
            base_rot: ExpMap::new(v.fixed_rows::<3>(3).into()),
            joints: (0..n_joints)
                .map(|i| ExpMap::new(v.fixed_rows::<3>(6 + 3 * i).into()))
                .collect(),
        })
    }
}

/// What the per-frame vectors of a [`Trajectory`] contain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateLayout {
    /// Full-body states, 6 + 3 * joints values per frame.
    Human { joints: usize },
    /// A single moving point (robot base), 3 values per frame.
    RobotBase,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        match self {
            StateLayout::Human { joints } => 6 + 3 * joints,
            StateLayout::RobotBase => 3,
        }
    }
}

/// Uniformly sampled sequence of flattened states.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frame_rate: f64,
    pub layout: StateLayout,
    pub frames: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(frame_rate: f64, layout: StateLayout, frames: Vec<DVector<f64>>) -> Result<Self> {
        if !(frame_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        for f in &frames {
            check_dim("Trajectory frame", layout.dim(), f.len())?;
        }
        Ok(Trajectory {
            frame_rate,
            layout,
            frames,
        })
    }

    pub fn from_states(frame_rate: f64, states: &[HumanState]) -> Result<Self> {
        let n_joints = states
            .first()
            .map(|s| s.joints.len())
            .ok_or_else(|| Error::InvalidArgument("empty state sequence".into()))?;
        Trajectory::new(
            frame_rate,
            StateLayout::Human { joints: n_joints },
            states.iter().map(|s| s.to_vector()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }
}

/// Backward-difference velocities in flattened coordinates:
/// `v_t = s_t - s_{t-1}`, with the first entry copied from the second
/// so the output matches the input length. At least two frames needed.
pub fn finite_difference_velocities(frames: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    if frames.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: frames.len(),
        });
    }
    let mut out = Vec::with_capacity(frames.len());
    out.push(&frames[1] - &frames[0]);
    for t in 1..frames.len() {
        out.push(&frames[t] - &frames[t - 1]);
    }
    Ok(out)
}
