//! Dataset slicing, heading augmentation, the position-plus-rotation
//! loss, and the training loop.
//!
//! Training teaches the predictor to reproduce recorded motion: each
//! sample is a fixed-length window whose first half is fed to the
//! encoder and whose second half the decoder must reproduce closed
//! loop. The loss covers the whole window, scoring the encoder's
//! one-step-ahead predictions as well, so both phases train the same
//! shared cell. Perturbations stay at zero throughout; they exist for
//! inference-time refinement only.

use crate::error::{check_dim, Error, Result};
use crate::kinematics::{
    dquat_dexpmap, quat_from_coords, quat_loss_pair, quat_mul, quat_to_expmap, rotmat, Quat,
    StateLayout, Trajectory,
};
use crate::model::{
    grad_full, rollout, BackwardUpstream, DeltaInput, ModelParams, PredictorModel,
};
use nalgebra::{DVector, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Window length per sample, seconds.
    pub slice_seconds: f64,
    /// Leading part of the window fed to the encoder, seconds.
    pub input_seconds: f64,
    pub frame_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Window step in frames when slicing.
    pub stride: usize,
    /// Global gradient-norm clip, a divergence guard.
    pub grad_clip: f64,
    /// Fraction of trajectories set aside per dataset.
    pub holdout_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            slice_seconds: 2.0,
            input_seconds: 1.0,
            frame_rate: 30.0,
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            stride: 1,
            grad_clip: 5.0,
            holdout_fraction: 0.1,
        }
    }
}

fn frames_of(seconds: f64, rate: f64, what: &str) -> Result<usize> {
    let exact = seconds * rate;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 || rounded < 0.0 {
        return Err(Error::Config(format!(
            "{what} of {seconds} s is not a whole number of frames at {rate} Hz"
        )));
    }
    Ok(rounded as usize)
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        let window = self.window_frames()?;
        let observed = self.observed_frames()?;
        if window < 2 {
            return Err(Error::Config(format!(
                "window of {window} frames cannot be split into input and target"
            )));
        }
        if observed < 2 || observed >= window {
            return Err(Error::Config(format!(
                "observed span of {observed} frames must lie in [2, window) for a window of {window}"
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(
                "holdout fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn window_frames(&self) -> Result<usize> {
        frames_of(self.slice_seconds, self.frame_rate, "window length")
    }

    pub fn observed_frames(&self) -> Result<usize> {
        frames_of(self.input_seconds, self.frame_rate, "input span")
    }

    pub fn target_frames(&self) -> Result<usize> {
        Ok(self.window_frames()? - self.observed_frames()?)
    }
}

/// One training window: observed frames followed by target frames.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub frames: Vec<DVector<f64>>,
    pub n_observed: usize,
    pub layout: StateLayout,
    pub frame_rate: f64,
}

impl TrainingSample {
    pub fn observed(&self) -> &[DVector<f64>] {
        &self.frames[..self.n_observed]
    }

    pub fn targets(&self) -> &[DVector<f64>] {
        &self.frames[self.n_observed..]
    }
}

/// Splits trajectories into an in-training set and a held-out tail.
/// The split is positional and deterministic: the last
/// `ceil(n * fraction)` trajectories are held out (never all of them),
/// so callers can rely on the same split across runs.
pub fn split_holdout(
    trajectories: Vec<Trajectory>,
    fraction: f64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(
            "holdout fraction must lie in [0, 1)".into(),
        ));
    }
    let n = trajectories.len();
    let count = ((n as f64 * fraction).ceil() as usize).min(n.saturating_sub(1));
    let mut train = trajectories;
    let holdout = train.split_off(n - count);
    Ok((train, holdout))
}

/// Cuts overlapping windows out of each trajectory. Trajectories
/// shorter than one window are skipped; the second return value counts
/// them so callers can warn.
pub fn slice_dataset(
    trajectories: &[Trajectory],
    config: &TrainingConfig,
) -> Result<(Vec<TrainingSample>, usize)> {
    config.validate()?;
    let window = config.window_frames()?;
    let n_observed = config.observed_frames()?;
    let mut samples: Vec<TrainingSample> = Vec::new();
    let mut skipped = 0usize;
    for traj in trajectories {
        if (traj.frame_rate - config.frame_rate).abs() > 1e-9 * config.frame_rate {
            return Err(Error::Config(format!(
                "trajectory at {} Hz cannot be sliced with a {} Hz config",
                traj.frame_rate, config.frame_rate
            )));
        }
        if let Some(first) = samples.first() {
            check_dim("dataset frame", first.frames[0].len(), traj.dim())?;
        }
        if traj.len() < window {
            skipped += 1;
            continue;
        }
        let mut start = 0;
        while start + window <= traj.len() {
            samples.push(TrainingSample {
                frames: traj.frames[start..start + window].to_vec(),
                n_observed,
                layout: traj.layout,
                frame_rate: traj.frame_rate,
            });
            start += config.stride;
        }
    }
    Ok((samples, skipped))
}

/// Rotates a sample by `theta` about the vertical axis through its
/// first-frame base position. Rigid over the whole window: base
/// positions orbit the pivot and base orientations are pre-composed
/// with the same turn, while joint coordinates, being local, are
/// untouched.
pub fn apply_heading(sample: &TrainingSample, theta: f64) -> TrainingSample {
    let rot = rotmat(&Vector3::new(0.0, 0.0, theta));
    let q_turn = quat_from_coords(&Vector3::new(0.0, 0.0, theta));
    let pivot = Vector3::new(sample.frames[0][0], sample.frames[0][1], sample.frames[0][2]);
    let mut frames = sample.frames.clone();
    for f in &mut frames {
        let p = Vector3::new(f[0], f[1], f[2]);
        let p2 = pivot + rot * (p - pivot);
        f[0] = p2.x;
        f[1] = p2.y;
        f[2] = p2.z;
        if f.len() >= 6 {
            let q = quat_from_coords(&Vector3::new(f[3], f[4], f[5]));
            let e2 = quat_to_expmap(&quat_mul(&q_turn, &q))
                .expect("product of unit quaternions is unit")
                .vector();
            f[3] = e2.x;
            f[4] = e2.y;
            f[5] = e2.z;
        }
    }
    TrainingSample {
        frames,
        n_observed: sample.n_observed,
        layout: sample.layout,
        frame_rate: sample.frame_rate,
    }
}

/// Heading augmentation: [`apply_heading`] with a uniform random angle.
pub fn augment_heading(sample: &TrainingSample, rng: &mut ChaCha8Rng) -> TrainingSample {
    apply_heading(sample, rng.gen_range(0.0..std::f64::consts::TAU))
}

const QUAT_LOSS_EPS: f64 = 1e-12;

/// Training loss between two equal-length state sequences: squared base
/// position error plus a sign-invariant quaternion distance for the
/// base rotation and every joint.
pub fn loss(predicted: &[DVector<f64>], target: &[DVector<f64>]) -> Result<f64> {
    check_dim("loss sequence length", target.len(), predicted.len())?;
    let mut total = 0.0;
    for (p, t) in predicted.iter().zip(target) {
        check_dim("loss frame", t.len(), p.len())?;
        for i in 0..3 {
            let d = p[i] - t[i];
            total += d * d;
        }
        let mut off = 3;
        while off + 3 <= p.len() {
            let qp = quat_from_coords(&Vector3::new(p[off], p[off + 1], p[off + 2]));
            let qt = quat_from_coords(&Vector3::new(t[off], t[off + 1], t[off + 2]));
            total += quat_loss_pair(&qp, &qt);
            off += 3;
        }
    }
    Ok(total)
}

/// Gradient of [`loss`] with respect to the predicted sequence.
pub fn loss_grad(
    predicted: &[DVector<f64>],
    target: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_dim("loss sequence length", target.len(), predicted.len())?;
    let mut grads = Vec::with_capacity(predicted.len());
    for (p, t) in predicted.iter().zip(target) {
        check_dim("loss frame", t.len(), p.len())?;
        let mut g = DVector::zeros(p.len());
        for i in 0..3 {
            g[i] = 2.0 * (p[i] - t[i]);
        }
        let mut off = 3;
        while off + 3 <= p.len() {
            let e = Vector3::new(p[off], p[off + 1], p[off + 2]);
            let qp = quat_from_coords(&e);
            let qt = quat_from_coords(&Vector3::new(t[off], t[off + 1], t[off + 2]));
            // Differentiate |q(e) - s q_t| for the sign s the loss picked.
            let qt = if quat_diff_norm(&qp, &qt.neg()) < quat_diff_norm(&qp, &qt) {
                qt.neg()
            } else {
                qt
            };
            let diff = Vector4::new(qp.w - qt.w, qp.x - qt.x, qp.y - qt.y, qp.z - qt.z);
            let n = diff.norm();
            if n > QUAT_LOSS_EPS {
                let jac = dquat_dexpmap(&e);
                let de = jac.transpose() * (diff / n);
                g[off] = de.x;
                g[off + 1] = de.y;
                g[off + 2] = de.z;
            }
            off += 3;
        }
        grads.push(g);
    }
    Ok(grads)
}

fn quat_diff_norm(a: &Quat, b: &Quat) -> f64 {
    let (dw, dx, dy, dz) = (a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z);
    (dw * dw + dx * dx + dy * dy + dz * dz).sqrt()
}

/// Loss and weight gradient of one sample: run the window forward with
/// zero perturbations, score the encoder's one-step predictions against
/// the later observed frames and the decoder's closed-loop states
/// against the targets, and push both upstreams through one reverse
/// pass.
fn sample_loss_and_grad(
    model: &PredictorModel,
    sample: &TrainingSample,
) -> Result<(f64, ModelParams)> {
    let observed = Trajectory::new(
        sample.frame_rate,
        sample.layout,
        sample.observed().to_vec(),
    )?;
    let horizon = sample.targets().len();
    let delta = DeltaInput::zeros(horizon, observed.dim());
    let r = rollout(model, &observed, &delta, horizon)?;

    let enc_states = r.encoder_one_step_states();
    let enc_targets = &sample.observed()[1..];
    let value = loss(&enc_states, enc_targets)? + loss(&r.states, sample.targets())?;

    let d_dec = loss_grad(&r.states, sample.targets())?;
    let d_enc = loss_grad(&enc_states, enc_targets)?;
    let grads = grad_full(
        model,
        &r,
        &BackwardUpstream {
            d_states: &d_dec,
            d_encoder_one_step: Some(&d_enc),
        },
    )?;
    Ok((
        value,
        grads.d_params.expect("weight gradients requested"),
    ))
}

/// Mean loss over a sample set, without augmentation or gradients.
pub fn evaluate_loss(model: &PredictorModel, samples: &[TrainingSample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for s in samples {
        let observed = Trajectory::new(s.frame_rate, s.layout, s.observed().to_vec())?;
        let horizon = s.targets().len();
        let delta = DeltaInput::zeros(horizon, observed.dim());
        let r = rollout(model, &observed, &delta, horizon)?;
        let enc_states = r.encoder_one_step_states();
        total += loss(&enc_states, &s.observed()[1..])? + loss(&r.states, s.targets())?;
    }
    Ok(Some(total / samples.len() as f64))
}

/// Per-epoch losses. The holdout column is absent when no holdout
/// samples were provided.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: PredictorModel,
    pub curve: Vec<EpochStats>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Minibatch training with adaptive moments.
///
/// Each epoch shuffles the sample order, draws a fresh heading
/// augmentation per visit, averages gradients over the batch, clips
/// their global norm, and applies one update per batch. Weights are
/// rounded through `f32` after every step so a trained model serializes
/// losslessly. Fully deterministic for a fixed seed. The reported train
/// loss is the pre-update running average of the epoch.
pub fn train(
    model: &PredictorModel,
    train_samples: &[TrainingSample],
    holdout_samples: &[TrainingSample],
    config: &TrainingConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for s in train_samples.iter().chain(holdout_samples) {
        check_dim("training sample dim", model.config.state_dim, s.frames[0].len())?;
        if s.n_observed < 2 || s.n_observed >= s.frames.len() {
            return Err(Error::Config(format!(
                "sample with {} observed of {} frames cannot train the encoder and decoder",
                s.n_observed,
                s.frames.len()
            )));
        }
    }

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut m = ModelParams::zeros(&model.config);
    let mut v = ModelParams::zeros(&model.config);
    let mut step = 0usize;
    let mut curve = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    for epoch in 0..config.epochs {
        // Fisher-Yates with the run's own stream keeps epochs
        // reproducible without materializing a second generator.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad_acc = ModelParams::zeros(&model.config);
            for &idx in batch {
                let sample = augment_heading(&train_samples[idx], &mut rng);
                let (value, grads) = sample_loss_and_grad(&model, &sample)?;
                if !value.is_finite() {
                    return Err(Error::Optimization(format!(
                        "training diverged: non-finite loss in epoch {epoch}"
                    )));
                }
                epoch_loss += value;
                for (acc, g) in grad_acc.slices_mut().into_iter().zip(grads.slices()) {
                    for (a, &gi) in acc.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
            }

            let scale = 1.0 / batch.len() as f64;
            let mut sq_norm = 0.0;
            for acc in grad_acc.slices_mut() {
                for a in acc.iter_mut() {
                    *a *= scale;
                    sq_norm += *a * *a;
                }
            }
            let norm = sq_norm.sqrt();
            let clip = if norm > config.grad_clip {
                config.grad_clip / norm
            } else {
                1.0
            };

            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            let gs = grad_acc.slices();
            let mut w = model.params.slices_mut();
            let mut ms = m.slices_mut();
            let mut vs = v.slices_mut();
            for ti in 0..w.len() {
                for i in 0..w[ti].len() {
                    let gi = gs[ti][i] * clip;
                    ms[ti][i] = ADAM_BETA1 * ms[ti][i] + (1.0 - ADAM_BETA1) * gi;
                    vs[ti][i] = ADAM_BETA2 * vs[ti][i] + (1.0 - ADAM_BETA2) * gi * gi;
                    let m_hat = ms[ti][i] / bc1;
                    let v_hat = vs[ti][i] / bc2;
                    let updated =
                        w[ti][i] - config.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    w[ti][i] = updated as f32 as f64;
                }
            }
        }

        let train_loss = epoch_loss / train_samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Optimization(format!(
                "training diverged: non-finite epoch loss in epoch {epoch}"
            )));
        }
        let holdout_loss = evaluate_loss(&model, holdout_samples)?;
        curve.push(EpochStats {
            epoch,
            train_loss,
            holdout_loss,
        });
    }

    Ok(TrainOutput { model, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{fk_positions, Skeleton};
    use crate::model::ModelConfig;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn config_2s() -> TrainingConfig {
        TrainingConfig::default()
    }

    fn constant_traj(frames: usize, dim: usize, fill: f64) -> Trajectory {
        Trajectory::new(
            30.0,
            StateLayout::Human {
                joints: (dim - 6) / 3,
            },
            vec![DVector::from_element(dim, fill); frames],
        )
        .unwrap()
    }

    #[test]
    fn slicing_counts_match_window_arithmetic() {
        let config = config_2s();
        let (samples, skipped) =
            slice_dataset(&[constant_traj(60, 12, 0.1)], &config).unwrap();
        assert_eq!((samples.len(), skipped), (1, 0));

        let (samples, skipped) =
            slice_dataset(&[constant_traj(90, 12, 0.1)], &config).unwrap();
        assert_eq!((samples.len(), skipped), (31, 0));

        let (samples, skipped) =
            slice_dataset(&[constant_traj(30, 12, 0.1)], &config).unwrap();
        assert_eq!((samples.len(), skipped), (0, 1));
    }

    #[test]
    fn slices_split_into_observed_and_target_halves() {
        let (samples, _) = slice_dataset(&[constant_traj(60, 12, 0.5)], &config_2s()).unwrap();
        assert_eq!(samples[0].observed().len(), 30);
        assert_eq!(samples[0].targets().len(), 30);
    }

    #[test]
    fn holdout_split_is_a_deterministic_tail() {
        let trajs: Vec<Trajectory> = (0..10)
            .map(|i| constant_traj(60, 12, i as f64))
            .collect();
        let (train, holdout) = split_holdout(trajs, 0.1).unwrap();
        assert_eq!((train.len(), holdout.len()), (9, 1));
        assert_eq!(holdout[0].frames[0][0], 9.0);

        let one = vec![constant_traj(60, 12, 0.0)];
        let (train, holdout) = split_holdout(one, 0.1).unwrap();
        assert_eq!((train.len(), holdout.len()), (1, 0));
    }

    fn wiggly_sample(joints: usize) -> TrainingSample {
        let dim = 6 + 3 * joints;
        let frames = (0..8)
            .map(|t| {
                DVector::from_fn(dim, |i, _| {
                    0.3 * ((t as f64 * 0.4) + i as f64).sin() + 0.05 * i as f64
                })
            })
            .collect();
        TrainingSample {
            frames,
            n_observed: 4,
            layout: StateLayout::Human { joints },
            frame_rate: 30.0,
        }
    }

    #[test]
    fn zero_heading_leaves_sample_in_place() {
        let s = wiggly_sample(2);
        let a = apply_heading(&s, 0.0);
        for (f, g) in s.frames.iter().zip(&a.frames) {
            assert_relative_eq!((f - g).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn half_turn_mirrors_base_positions_about_the_pivot() {
        let s = wiggly_sample(2);
        let a = apply_heading(&s, PI);
        let pivot = Vector3::new(s.frames[0][0], s.frames[0][1], s.frames[0][2]);
        for (f, g) in s.frames.iter().zip(&a.frames) {
            assert_relative_eq!(g[0], 2.0 * pivot.x - f[0], epsilon = 1e-12);
            assert_relative_eq!(g[1], 2.0 * pivot.y - f[1], epsilon = 1e-12);
            assert_relative_eq!(g[2], f[2], epsilon = 1e-12);
        }
        // Rigid: inter-frame base distances survive.
        for t in 1..s.frames.len() {
            let d0 = (&s.frames[t] - &s.frames[t - 1]).fixed_rows::<3>(0).norm();
            let d1 = (&a.frames[t] - &a.frames[t - 1]).fixed_rows::<3>(0).norm();
            assert_relative_eq!(d0, d1, epsilon = 1e-12);
        }
    }

    #[test]
    fn heading_commutes_with_forward_kinematics() {
        let skel = Skeleton::default_human();
        let dim = skel.state_dim();
        let frames = (0..4)
            .map(|t| DVector::from_fn(dim, |i, _| 0.2 * ((i + t) as f64 * 0.7).sin()))
            .collect();
        let s = TrainingSample {
            frames,
            n_observed: 2,
            layout: StateLayout::Human { joints: 20 },
            frame_rate: 30.0,
        };
        for theta in [0.3, 1.7, 4.4] {
            let a = apply_heading(&s, theta);
            let rot = rotmat(&Vector3::new(0.0, 0.0, theta));
            let pivot = Vector3::new(s.frames[0][0], s.frames[0][1], s.frames[0][2]);
            for (f, g) in s.frames.iter().zip(&a.frames) {
                let orig = fk_positions(&skel, f).unwrap();
                let moved = fk_positions(&skel, g).unwrap();
                for j in 0..skel.n_joints() {
                    let expected = pivot + rot * (orig.positions[j] - pivot);
                    assert_relative_eq!(
                        (moved.positions[j] - expected).norm(),
                        0.0,
                        epsilon = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn heading_preserves_the_loss_between_two_sequences() {
        // Rotating prediction and target by the same rigid map must
        // not change the loss: the position term sees rotated
        // differences and the quaternion term a shared left factor,
        // both isometries.
        let s = wiggly_sample(2);
        let mut target = s.clone();
        for f in &mut target.frames {
            for x in f.iter_mut() {
                *x += 0.1;
            }
        }
        let before = loss(&s.frames, &target.frames).unwrap();

        let theta = 2.1;
        let sa = apply_heading(&s, theta);
        // Rotate the target about the SAME pivot by prepending the
        // prediction's pivot frame and dropping it afterwards.
        let mut merged = target.clone();
        merged.frames.insert(0, s.frames[0].clone());
        let ta = apply_heading(&merged, theta);
        let after = loss(&sa.frames, &ta.frames[1..]).unwrap();
        assert_relative_eq!(before, after, epsilon = 1e-9);
    }

    #[test]
    fn loss_is_zero_for_identical_sequences() {
        let s = wiggly_sample(2);
        assert_eq!(loss(&s.frames, &s.frames).unwrap(), 0.0);
    }

    #[test]
    fn loss_ignores_quaternion_sign_flips() {
        // The same physical rotation written with the angle wrapped the
        // other way around flips the quaternion's sign.
        let mut p = vec![DVector::zeros(12)];
        let mut t = vec![DVector::zeros(12)];
        p[0][3] = PI / 2.0;
        t[0][3] = PI / 2.0 - 2.0 * PI;
        let l = loss(&p, &t).unwrap();
        assert_relative_eq!(l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_hand_value_for_offset_position() {
        let mut p = vec![DVector::zeros(12)];
        let t = vec![DVector::zeros(12)];
        p[0][0] = 0.3;
        assert_relative_eq!(loss(&p, &t).unwrap(), 0.09, epsilon = 1e-15);
    }

    #[test]
    fn loss_rejects_length_mismatch() {
        let s = wiggly_sample(2);
        assert!(loss(&s.frames[..2], &s.frames[..3]).is_err());
    }

    fn tiny_dataset(joints: usize, n: usize) -> Vec<TrainingSample> {
        let dim = 6 + 3 * joints;
        (0..n)
            .map(|k| {
                let phase = k as f64 * 0.37;
                let frames = (0..8)
                    .map(|t| {
                        DVector::from_fn(dim, |i, _| {
                            0.2 * ((t as f64 * 0.5) + phase + i as f64 * 0.3).sin()
                        })
                    })
                    .collect();
                TrainingSample {
                    frames,
                    n_observed: 4,
                    layout: StateLayout::Human { joints },
                    frame_rate: 30.0,
                }
            })
            .collect()
    }

    fn short_window_config(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            slice_seconds: 8.0 / 30.0,
            input_seconds: 4.0 / 30.0,
            learning_rate: 1e-2,
            batch_size: 4,
            epochs,
            seed: 11,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_epochs_return_the_model_unchanged() {
        let model = PredictorModel::random_init(ModelConfig::test_scale(12), 5).unwrap();
        let data = tiny_dataset(2, 6);
        let out = train(&model, &data, &[], &short_window_config(0)).unwrap();
        assert_eq!(out.model, model);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn training_reduces_the_loss() {
        let model = PredictorModel::random_init(ModelConfig::test_scale(12), 5).unwrap();
        let data = tiny_dataset(2, 12);
        let holdout = tiny_dataset(2, 2);
        let out = train(&model, &data, &holdout, &short_window_config(30)).unwrap();
        let first = out.curve.first().unwrap().train_loss;
        let last = out.curve.last().unwrap().train_loss;
        assert!(
            last < first,
            "loss did not improve: first {first}, last {last}"
        );
        assert!(out.curve.iter().all(|e| e.holdout_loss.is_some()));
    }

    #[test]
    fn training_is_deterministic_under_a_fixed_seed() {
        let model = PredictorModel::random_init(ModelConfig::test_scale(12), 5).unwrap();
        let data = tiny_dataset(2, 6);
        let a = train(&model, &data, &[], &short_window_config(3)).unwrap();
        let b = train(&model, &data, &[], &short_window_config(3)).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn trained_weights_stay_f32_representable() {
        let model = PredictorModel::random_init(ModelConfig::test_scale(12), 5).unwrap();
        let data = tiny_dataset(2, 6);
        let out = train(&model, &data, &[], &short_window_config(2)).unwrap();
        for s in out.model.params.slices() {
            for &x in s {
                assert_eq!(x, x as f32 as f64);
            }
        }
    }

    #[test]
    fn non_finite_sample_trips_the_divergence_guard() {
        let model = PredictorModel::random_init(ModelConfig::test_scale(12), 5).unwrap();
        let mut data = tiny_dataset(2, 4);
        data[2].frames[1][0] = f64::NAN;
        let err = train(&model, &data, &[], &short_window_config(1)).unwrap_err();
        assert!(matches!(err, Error::Optimization(_)));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let model = PredictorModel::random_init(ModelConfig::test_scale(12), 5).unwrap();
        assert!(train(&model, &[], &[], &short_window_config(1)).is_err());
    }
}
