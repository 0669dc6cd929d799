//! Forward unrolling: encoder over the observed window, closed-loop
//! decoder over the prediction horizon, with caches kept for the
//! backward pass.

use super::{check_observed, gru_cell_step_cached, GruCellCache, PredictorModel};
use crate::error::{check_dim, Error, Result};
use crate::kinematics::{finite_difference_velocities, Trajectory};
use nalgebra::DVector;

/// Per-step velocity perturbations for the decoder, one vector per
/// predicted frame. The optional coordinate mask marks which
/// coordinates an optimizer may touch; masked-out coordinates must stay
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaInput {
    steps: Vec<DVector<f64>>,
    coord_mask: Option<Vec<bool>>,
}

impl DeltaInput {
    pub fn zeros(horizon: usize, dim: usize) -> Self {
        DeltaInput {
            steps: vec![DVector::zeros(dim); horizon],
            coord_mask: None,
        }
    }

    pub fn new(steps: Vec<DVector<f64>>, coord_mask: Option<Vec<bool>>) -> Result<Self> {
        let dim = steps.first().map_or(0, |s| s.len());
        for s in &steps {
            check_dim("DeltaInput step", dim, s.len())?;
        }
        if let Some(mask) = &coord_mask {
            check_dim("DeltaInput mask", dim, mask.len())?;
            for s in &steps {
                for (i, &keep) in mask.iter().enumerate() {
                    if !keep && s[i] != 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "delta has nonzero entry at masked-out coordinate {i}"
                        )));
                    }
                }
            }
        }
        Ok(DeltaInput { steps, coord_mask })
    }

    pub fn steps(&self) -> &[DVector<f64>] {
        &self.steps
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.len())
    }

    pub fn coord_mask(&self) -> Option<&[bool]> {
        self.coord_mask.as_deref()
    }

    pub fn is_zero(&self) -> bool {
        self.steps.iter().all(|s| s.iter().all(|&v| v == 0.0))
    }

    /// Free coordinates per step under the mask.
    pub fn free_per_step(&self) -> usize {
        match &self.coord_mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.dim(),
        }
    }

    /// Flattens the free coordinates (step-major) for an optimizer.
    pub fn pack(&self) -> DVector<f64> {
        let f = self.free_per_step();
        let mut out = DVector::zeros(f * self.steps.len());
        let mut k = 0;
        for s in &self.steps {
            for i in 0..s.len() {
                if self.coord_mask.as_ref().map_or(true, |m| m[i]) {
                    out[k] = s[i];
                    k += 1;
                }
            }
        }
        out
    }

    /// Projects per-step full-dimension gradients onto the packed free
    /// coordinates, matching the layout of [`DeltaInput::pack`].
    pub fn pack_gradient(&self, grads: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_dim("gradient steps", self.steps.len(), grads.len())?;
        let f = self.free_per_step();
        let mut out = DVector::zeros(f * grads.len());
        let mut k = 0;
        for g in grads {
            check_dim("gradient dim", self.dim(), g.len())?;
            for i in 0..g.len() {
                if self.coord_mask.as_ref().map_or(true, |m| m[i]) {
                    out[k] = g[i];
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DeltaInput::pack`] against this delta's own shape.
    pub fn unpack_from(&self, packed: &DVector<f64>) -> Result<DeltaInput> {
        let f = self.free_per_step();
        check_dim("packed delta", f * self.steps.len(), packed.len())?;
        let mut steps = vec![DVector::zeros(self.dim()); self.steps.len()];
        let mut k = 0;
        for s in &mut steps {
            for i in 0..s.len() {
                if self.coord_mask.as_ref().map_or(true, |m| m[i]) {
                    s[i] = packed[k];
                    k += 1;
                }
            }
        }
        Ok(DeltaInput {
            steps,
            coord_mask: self.coord_mask.clone(),
        })
    }
}

/// Activations of one unrolled step.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    /// Concatenated input features, before the input projection.
    pub feat: DVector<f64>,
    /// Per-layer cell caches, bottom to top.
    pub cells: Vec<GruCellCache>,
    /// Top hidden state after this step (input to the output projection).
    pub h_top: DVector<f64>,
}

/// Full forward record: encoder steps, decoder steps, and the
/// quantities the residual loop produced.
#[derive(Clone, Debug)]
pub(crate) struct Unrolled {
    pub enc: Vec<StepCache>,
    /// Velocity emitted at each encoder step (the one-step-ahead
    /// prediction for the next observed frame).
    pub enc_outputs: Vec<DVector<f64>>,
    pub dec: Vec<StepCache>,
    pub states: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
}

fn forward_step(
    model: &PredictorModel,
    state: &DVector<f64>,
    velocity: &DVector<f64>,
    hidden: &mut [DVector<f64>],
) -> (DVector<f64>, StepCache) {
    let feat = model.features(state, velocity);
    let p = &model.params;
    let mut x = p.in_b.clone();
    x.gemv(1.0, &p.in_w, &feat, 1.0);
    let mut cells = Vec::with_capacity(p.layers.len());
    for (l, w) in p.layers.iter().enumerate() {
        let (h_new, cache) = gru_cell_step_cached(w, &x, &hidden[l]);
        hidden[l] = h_new.clone();
        cells.push(cache);
        x = h_new;
    }
    let h_top = x;
    let mut out = p.out_b.clone();
    out.gemv(1.0, &p.out_w, &h_top, 1.0);
    (out, StepCache { feat, cells, h_top })
}

/// Runs encoder and decoder from raw frames. `frames` are the observed
/// states (at least two); `delta.steps()` must match the horizon.
pub(crate) fn unroll(
    model: &PredictorModel,
    frames: &[DVector<f64>],
    delta: &DeltaInput,
    horizon: usize,
) -> Result<Unrolled> {
    let d = model.config.state_dim;
    if delta.horizon() != horizon {
        return Err(Error::Dimension {
            context: "delta horizon",
            expected: horizon,
            actual: delta.horizon(),
        });
    }
    if horizon > 0 {
        check_dim("delta dim", d, delta.dim())?;
    }
    let vels = finite_difference_velocities(frames)?;
    let m = frames.len() - 1;
    let layers = model.params.layers.len();
    let h = model.config.hidden_size;
    let mut hidden = vec![DVector::zeros(h); layers];

    let mut enc = Vec::with_capacity(m);
    let mut enc_outputs = Vec::with_capacity(m);
    for j in 0..m {
        let (out, cache) = forward_step(model, &frames[j], &vels[j], &mut hidden);
        enc.push(cache);
        enc_outputs.push(out);
    }

    let mut dec = Vec::with_capacity(horizon);
    let mut states = Vec::with_capacity(horizon);
    let mut velocities = Vec::with_capacity(horizon);
    let mut prev_s = frames[m].clone();
    let mut prev_v = vels[m].clone();
    for k in 0..horizon {
        let (v_hat, cache) = forward_step(model, &prev_s, &prev_v, &mut hidden);
        dec.push(cache);
        // The perturbation joins the recirculated velocity signal, so it
        // shifts this state and everything the decoder builds on it.
        let v_tilde = v_hat + &delta.steps()[k];
        let s_new = &prev_s + &v_tilde;
        states.push(s_new.clone());
        velocities.push(v_tilde.clone());
        prev_s = s_new;
        prev_v = v_tilde;
    }

    Ok(Unrolled {
        enc,
        enc_outputs,
        dec,
        states,
        velocities,
    })
}

/// A decoder rollout: predicted states and velocities for each future
/// frame, plus the cached activations the backward pass consumes.
#[derive(Clone, Debug)]
pub struct RolloutResult {
    /// Predicted states, one per future frame.
    pub states: Vec<DVector<f64>>,
    /// Velocities the residual loop applied (network output plus
    /// perturbation), aligned with `states`.
    pub velocities: Vec<DVector<f64>>,
    pub(crate) cache: Unrolled,
    pub(crate) observed: Vec<DVector<f64>>,
}

impl RolloutResult {
    /// Teacher-forced one-step predictions over the observed window
    /// (frames 1..), used by the training loss.
    pub fn encoder_one_step_states(&self) -> Vec<DVector<f64>> {
        self.cache
            .enc_outputs
            .iter()
            .enumerate()
            .map(|(j, u)| &self.observed[j] + u)
            .collect()
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

/// Encodes the observed trajectory and rolls the decoder out for
/// `horizon` steps under the given velocity perturbations. With an
/// all-zero delta this is the model's unperturbed prediction.
pub fn rollout(
    model: &PredictorModel,
    observed: &Trajectory,
    delta: &DeltaInput,
    horizon: usize,
) -> Result<RolloutResult> {
    check_observed(model, observed)?;
    let cache = unroll(model, &observed.frames, delta, horizon)?;
    Ok(RolloutResult {
        states: cache.states.clone(),
        velocities: cache.velocities.clone(),
        cache,
        observed: observed.frames.clone(),
    })
}
