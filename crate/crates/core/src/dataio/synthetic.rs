//! Seeded synthetic motion generators.
//!
//! Three families: reaching (minimum-jerk blend from the rest pose to
//! a randomized reach pose), walking (straight base path with a
//! sinusoidal gait), and a detour variant that bends the walk around a
//! sphere placed on the straight-line midpoint. Every sample draws
//! from its own derived seed, so datasets are reproducible regardless
//! of generation order.

use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, StateLayout, Trajectory};
use nalgebra::{DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Reaching,
    Walking,
    ReachingWithObstacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub kind: GeneratorKind,
    pub count: usize,
    pub duration_seconds: f64,
    pub frame_rate: f64,
    /// Axis-aligned workspace the base stays inside (meters).
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: GeneratorKind::Reaching,
            count: 20,
            duration_seconds: 3.0,
            frame_rate: 30.0,
            bounds_min: [-2.0, -2.0, 0.0],
            bounds_max: [2.0, 2.0, 2.0],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) || !(self.duration_seconds > 0.0) {
            return Err(Error::Config(
                "frame rate and duration must be positive".into(),
            ));
        }
        if self.frames() < 2 {
            return Err(Error::Config(format!(
                "{} s at {} Hz yields fewer than 2 frames",
                self.duration_seconds, self.frame_rate
            )));
        }
        for i in 0..3 {
            if !(self.bounds_max[i] > self.bounds_min[i]) {
                return Err(Error::Config(format!(
                    "degenerate workspace bounds on axis {i}: [{}, {}]",
                    self.bounds_min[i], self.bounds_max[i]
                )));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration_seconds * self.frame_rate).round() as usize
    }
}

/// Minimum-jerk time profile: zero velocity and acceleration at both
/// ends, monotone in between.
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Hard ceiling on per-frame base displacement, meters per second.
const MAX_BASE_SPEED: f64 = 1.8;

pub fn generate_synthetic(spec: &SyntheticSpec, skel: &Skeleton) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    (0..spec.count)
        .map(|i| {
            // Per-sample streams decouple samples from each other and
            // from generation order.
            let stream = spec
                .seed
                .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            match spec.kind {
                GeneratorKind::Reaching => reaching_sample(spec, skel, &mut rng),
                GeneratorKind::Walking => walking_sample(spec, skel, &mut rng, false),
                GeneratorKind::ReachingWithObstacle => walking_sample(spec, skel, &mut rng, true),
            }
        })
        .collect()
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Standing pelvis height, clamped into the workspace.
fn base_height(spec: &SyntheticSpec) -> f64 {
    0.95f64.clamp(spec.bounds_min[2], spec.bounds_max[2])
}

fn assemble(
    spec: &SyntheticSpec,
    skel: &Skeleton,
    base: &[Vector3<f64>],
    yaw: &[f64],
    joints: &[Vec<Vector3<f64>>],
) -> Result<Trajectory> {
    let n = base.len();
    let dim = skel.state_dim();
    let frames = (0..n)
        .map(|t| {
            let mut f = DVector::zeros(dim);
            f.fixed_rows_mut::<3>(0).copy_from(&base[t]);
            f[5] = yaw[t];
            for (j, series) in joints.iter().enumerate() {
                f.fixed_rows_mut::<3>(6 + 3 * j).copy_from(&series[t]);
            }
            f
        })
        .collect();
    Trajectory::new(
        spec.frame_rate,
        StateLayout::Human {
            joints: skel.n_joints(),
        },
        frames,
    )
}

fn reaching_sample(
    spec: &SyntheticSpec,
    skel: &Skeleton,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let n = spec.frames();
    let pos = Vector3::new(
        uniform_in(rng, spec.bounds_min[0], spec.bounds_max[0]),
        uniform_in(rng, spec.bounds_min[1], spec.bounds_max[1]),
        base_height(spec),
    );
    let heading = uniform_in(rng, -3.0, 3.0);
    // A randomized reach pose; blending every joint toward it sweeps
    // the wrist along a smooth, bell-shaped-velocity path whose target
    // and height vary with the draw.
    let reach: Vec<Vector3<f64>> = (0..skel.n_joints())
        .map(|_| {
            Vector3::new(
                uniform_in(rng, -0.5, 0.5),
                uniform_in(rng, -0.5, 0.5),
                uniform_in(rng, -0.5, 0.5),
            )
        })
        .collect();

    let base = vec![pos; n];
    let yaw = vec![heading; n];
    let joints: Vec<Vec<Vector3<f64>>> = reach
        .iter()
        .map(|target| {
            (0..n)
                .map(|t| target * min_jerk(t as f64 / (n - 1) as f64))
                .collect()
        })
        .collect();
    assemble(spec, skel, &base, &yaw, &joints)
}

/// Largest travel distance from `start` along `dir` before leaving the
/// rectangle spanned by the xy bounds.
fn room_along(spec: &SyntheticSpec, start: Vector2<f64>, dir: Vector2<f64>) -> f64 {
    let mut room = f64::INFINITY;
    for axis in 0..2 {
        if dir[axis].abs() < 1e-12 {
            continue;
        }
        let wall = if dir[axis] > 0.0 {
            spec.bounds_max[axis]
        } else {
            spec.bounds_min[axis]
        };
        room = room.min((wall - start[axis]) / dir[axis]);
    }
    room.max(0.0)
}

/// Rescales the horizontal path about its first point until no frame
/// step exceeds the speed ceiling. The workspace is convex, so pulling
/// points toward an in-bounds start keeps them in bounds.
fn cap_base_speed(base: &mut [Vector3<f64>], frame_rate: f64) {
    let limit = MAX_BASE_SPEED / frame_rate;
    let max_step = base
        .windows(2)
        .map(|w| (w[1] - w[0]).norm())
        .fold(0.0f64, f64::max);
    if max_step <= limit {
        return;
    }
    let k = limit / max_step;
    let origin = base[0];
    for p in base.iter_mut() {
        *p = origin + (*p - origin) * k;
    }
}

fn walking_sample(
    spec: &SyntheticSpec,
    skel: &Skeleton,
    rng: &mut ChaCha8Rng,
    detour: bool,
) -> Result<Trajectory> {
    let n = spec.frames();
    let z = base_height(spec);
    let start = Vector2::new(
        uniform_in(rng, spec.bounds_min[0], spec.bounds_max[0]),
        uniform_in(rng, spec.bounds_min[1], spec.bounds_max[1]),
    );
    let theta = uniform_in(rng, -3.0, 3.0);
    let fwd = Vector2::new(theta.cos(), theta.sin());
    // Walk whichever way has more floor.
    let (dir, heading) = if room_along(spec, start, fwd) >= room_along(spec, start, -fwd) {
        (fwd, theta)
    } else {
        (-fwd, wrap_angle(theta + std::f64::consts::PI))
    };
    let speed = uniform_in(rng, 0.5, 1.6);
    let travel = (speed * spec.duration_seconds).min(0.95 * room_along(spec, start, dir));
    let goal = start + dir * travel;

    let mut base: Vec<Vector3<f64>> = if detour {
        // Quadratic Bezier bending around a sphere imagined at the
        // straight-line midpoint.
        let side = Vector2::new(-dir.y, dir.x) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let bulge = uniform_in(rng, 0.5, 1.0);
        let mid = (start + goal) * 0.5 + side * bulge;
        (0..n)
            .map(|t| {
                let tau = t as f64 / (n - 1) as f64;
                let a = start.lerp(&mid, tau);
                let b = mid.lerp(&goal, tau);
                let p = a.lerp(&b, tau);
                Vector3::new(p.x, p.y, z)
            })
            .collect()
    } else {
        (0..n)
            .map(|t| {
                let tau = t as f64 / (n - 1) as f64;
                let p = start.lerp(&goal, tau);
                Vector3::new(p.x, p.y, z)
            })
            .collect()
    };
    cap_base_speed(&mut base, spec.frame_rate);

    // Face the direction of travel. The detour's first step already
    // points off the straight line, so the initial yaw comes from the
    // path itself; later increments are unwrapped to keep the raw
    // coordinates continuous.
    let first_step = base[1] - base[0];
    let mut current = if first_step.xy().norm() > 1e-9 {
        first_step.y.atan2(first_step.x)
    } else {
        heading
    };
    let mut yaw = Vec::with_capacity(n);
    yaw.push(current);
    for t in 1..n {
        let step = base[t] - base[t - 1];
        if step.xy().norm() > 1e-9 {
            let target = step.y.atan2(step.x);
            current += wrap_angle(target - current);
        }
        yaw.push(current);
    }

    // Sinusoidal gait, legs antiphase, arms counter-swinging. Joints
    // are matched by name so unfamiliar skeletons just walk stiffly.
    let speed_actual = (base[n - 1] - base[0]).norm() / spec.duration_seconds;
    let stride_hz = 0.6 + 0.9 * speed_actual;
    let swing = 0.25 + 0.15 * speed_actual;
    let omega = std::f64::consts::TAU * stride_hz;
    let mut joints = vec![vec![Vector3::zeros(); n]; skel.n_joints()];
    let phased: [(&str, f64, f64); 6] = [
        ("l_hip", swing, 0.0),
        ("r_hip", swing, std::f64::consts::PI),
        ("l_knee", 0.6 * swing, std::f64::consts::FRAC_PI_2),
        ("r_knee", 0.6 * swing, std::f64::consts::PI + std::f64::consts::FRAC_PI_2),
        ("l_shoulder", 0.4 * swing, std::f64::consts::PI),
        ("r_shoulder", 0.4 * swing, 0.0),
    ];
    for (name, amp, phase) in phased {
        if let Some(j) = skel.index_of(name) {
            for (t, v) in joints[j].iter_mut().enumerate() {
                // Swing about the local lateral axis.
                v.y = amp * (omega * t as f64 / spec.frame_rate + phase).sin();
            }
        }
    }
    assemble(spec, skel, &base, &yaw, &joints)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = (a + std::f64::consts::PI) % two_pi;
    if r < 0.0 {
        r += two_pi;
    }
    r - std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(kind: GeneratorKind, count: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            count,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_count_yields_empty_dataset() {
        let skel = Skeleton::default_human();
        let out = generate_synthetic(&spec(GeneratorKind::Reaching, 0, 1), &skel).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_bitwise() {
        let skel = Skeleton::default_human();
        for kind in [
            GeneratorKind::Reaching,
            GeneratorKind::Walking,
            GeneratorKind::ReachingWithObstacle,
        ] {
            let a = generate_synthetic(&spec(kind, 4, 7), &skel).unwrap();
            let b = generate_synthetic(&spec(kind, 4, 7), &skel).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.frames, y.frames);
            }
        }
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        let skel = Skeleton::default_human();
        let mut s = spec(GeneratorKind::Walking, 1, 0);
        s.bounds_min[1] = s.bounds_max[1];
        assert!(generate_synthetic(&s, &skel).is_err());
    }

    #[test]
    fn walking_base_speed_stays_under_two_meters_per_second() {
        let skel = Skeleton::default_human();
        for kind in [GeneratorKind::Walking, GeneratorKind::ReachingWithObstacle] {
            let data = generate_synthetic(&spec(kind, 8, 42), &skel).unwrap();
            for traj in &data {
                for w in traj.frames.windows(2) {
                    let step = (w[1].fixed_rows::<3>(0) - w[0].fixed_rows::<3>(0)).norm();
                    assert!(step * traj.frame_rate <= 2.0, "step speed {}", step * 30.0);
                }
            }
        }
    }

    #[test]
    fn base_path_stays_inside_the_workspace() {
        let skel = Skeleton::default_human();
        for kind in [GeneratorKind::Walking, GeneratorKind::Reaching] {
            let s = spec(kind, 8, 3);
            let data = generate_synthetic(&s, &skel).unwrap();
            for traj in &data {
                for f in &traj.frames {
                    for axis in 0..2 {
                        assert!(f[axis] >= s.bounds_min[axis] - 1e-9);
                        assert!(f[axis] <= s.bounds_max[axis] + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn reaching_starts_at_rest_and_ends_stationary() {
        let skel = Skeleton::default_human();
        let data = generate_synthetic(&spec(GeneratorKind::Reaching, 3, 9), &skel).unwrap();
        for traj in &data {
            let first = &traj.frames[0];
            for i in 6..first.len() {
                assert_eq!(first[i], 0.0, "rest pose has identity joints");
            }
            let n = traj.frames.len();
            let last_step = (&traj.frames[n - 1] - &traj.frames[n - 2]).norm();
            // Minimum-jerk endings are quiescent.
            assert!(last_step < 1e-3, "final joint step {last_step}");
        }
    }

    #[test]
    fn joint_angles_change_smoothly() {
        let skel = Skeleton::default_human();
        for kind in [
            GeneratorKind::Reaching,
            GeneratorKind::Walking,
            GeneratorKind::ReachingWithObstacle,
        ] {
            let data = generate_synthetic(&spec(kind, 4, 5), &skel).unwrap();
            for traj in &data {
                for w in traj.frames.windows(2) {
                    let dq = (w[1].rows(3, w[1].len() - 3) - w[0].rows(3, w[0].len() - 3)).amax();
                    assert!(dq < 0.25, "per-frame angle jump {dq}");
                }
            }
        }
    }

    #[test]
    fn detour_bends_away_from_the_straight_line() {
        let skel = Skeleton::default_human();
        let data =
            generate_synthetic(&spec(GeneratorKind::ReachingWithObstacle, 6, 21), &skel).unwrap();
        for traj in &data {
            let n = traj.frames.len();
            let a = Vector2::new(traj.frames[0][0], traj.frames[0][1]);
            let b = Vector2::new(traj.frames[n - 1][0], traj.frames[n - 1][1]);
            let span = b - a;
            let mut max_dev = 0.0f64;
            for f in &traj.frames {
                let p = Vector2::new(f[0], f[1]) - a;
                let dev = if span.norm() > 1e-9 {
                    (p.x * span.y - p.y * span.x).abs() / span.norm()
                } else {
                    p.norm()
                };
                max_dev = max_dev.max(dev);
            }
            assert!(max_dev > 0.1, "deviation {max_dev} too small for a detour");
        }
    }

    #[test]
    fn min_jerk_profile_shape() {
        assert_eq!(min_jerk(0.0), 0.0);
        assert_eq!(min_jerk(1.0), 1.0);
        assert_relative_eq!(min_jerk(0.5), 0.5, epsilon = 1e-15);
        // Monotone on a grid.
        let mut prev = 0.0;
        for k in 1..=100 {
            let v = min_jerk(k as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }
}
