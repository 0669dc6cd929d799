//! The position-velocity recurrent predictor.
//!
//! A stack of GRU cells consumes, at every time step, the masked
//! previous state together with the previous velocity, and emits the
//! next velocity; the next state is the previous state plus that
//! velocity. During the observed window the inputs come from data
//! (encoder); afterwards the model feeds its own predictions back
//! (decoder). Per-step perturbations can be injected into the
//! recirculated velocity signal to steer the decoder, which is what the
//! trajectory optimizer differentiates through.
//!
//! Everything is plain `f64` linear algebra. Weights are kept
//! representable in `f32` (initialization and training round through
//! `f32`), so the on-disk format loses nothing.

mod backward;
mod io;
mod rollout;

pub use backward::{grad_delta, grad_full, BackwardUpstream, Gradients};
pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use rollout::{rollout, DeltaInput, RolloutResult};

use crate::error::{check_dim, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shape and input wiring of a [`PredictorModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Flattened state dimension D (6 + 3 * joints for humans).
    pub state_dim: usize,
    /// Hidden units per GRU layer.
    pub hidden_size: usize,
    /// Stacked GRU layers.
    pub num_layers: usize,
    /// Which state coordinates enter the recurrent input. The base
    /// position never does by default (the predictor should not care
    /// where in the room a motion happens); velocities of all
    /// coordinates always enter.
    pub pos_input_mask: Vec<bool>,
    /// Frame rate the model was built for; inputs are validated
    /// against it.
    pub frame_rate: f64,
}

impl ModelConfig {
    /// Mask admitting every coordinate except the base position.
    pub fn default_pos_mask(state_dim: usize) -> Vec<bool> {
        (0..state_dim).map(|i| i >= 3).collect()
    }

    /// Full-scale shape: 3 layers of 1000 hidden units.
    pub fn full_scale(state_dim: usize) -> Self {
        ModelConfig {
            state_dim,
            hidden_size: 1000,
            num_layers: 3,
            pos_input_mask: Self::default_pos_mask(state_dim),
            frame_rate: 30.0,
        }
    }

    /// Small shape for tests and quick experiments: 1 layer, 32 units.
    pub fn test_scale(state_dim: usize) -> Self {
        ModelConfig {
            state_dim,
            hidden_size: 32,
            num_layers: 1,
            pos_input_mask: Self::default_pos_mask(state_dim),
            frame_rate: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.hidden_size == 0 || self.num_layers == 0 {
            return Err(Error::Config(
                "state_dim, hidden_size and num_layers must be positive".into(),
            ));
        }
        if self.pos_input_mask.len() != self.state_dim {
            return Err(Error::Config(format!(
                "pos_input_mask has {} entries for state dim {}",
                self.pos_input_mask.len(),
                self.state_dim
            )));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("frame_rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of masked position coordinates fed to the network.
    pub fn masked_pos_dim(&self) -> usize {
        self.pos_input_mask.iter().filter(|&&b| b).count()
    }

    /// Width of the concatenated recurrent input
    /// (masked positions followed by all velocities).
    pub fn feature_dim(&self) -> usize {
        self.masked_pos_dim() + self.state_dim
    }
}

/// Weights of one GRU cell. `w_*` multiply the input, `u_*` the hidden
/// state; gates follow the standard update/reset/candidate form:
///
/// ```text
/// z  = sigmoid(w_z x + u_z h + b_z)
/// r  = sigmoid(w_r x + u_r h + b_r)
/// hc = tanh(w_h x + u_h (r . h) + b_h)
/// h' = (1 - z) . h + z . hc
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayerWeights {
    pub w_z: DMatrix<f64>,
    pub u_z: DMatrix<f64>,
    pub b_z: DVector<f64>,
    pub w_r: DMatrix<f64>,
    pub u_r: DMatrix<f64>,
    pub b_r: DVector<f64>,
    pub w_h: DMatrix<f64>,
    pub u_h: DMatrix<f64>,
    pub b_h: DVector<f64>,
}

impl GruLayerWeights {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruLayerWeights {
            w_z: DMatrix::zeros(hidden, input_dim),
            u_z: DMatrix::zeros(hidden, hidden),
            b_z: DVector::zeros(hidden),
            w_r: DMatrix::zeros(hidden, input_dim),
            u_r: DMatrix::zeros(hidden, hidden),
            b_r: DVector::zeros(hidden),
            w_h: DMatrix::zeros(hidden, input_dim),
            u_h: DMatrix::zeros(hidden, hidden),
            b_h: DVector::zeros(hidden),
        }
    }
}

/// All trainable tensors. Shared between the model itself, gradient
/// accumulators and optimizer moments, so they stay shape-consistent
/// by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub in_w: DMatrix<f64>,
    pub in_b: DVector<f64>,
    pub layers: Vec<GruLayerWeights>,
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_size;
        ModelParams {
            in_w: DMatrix::zeros(h, config.feature_dim()),
            in_b: DVector::zeros(h),
            layers: (0..config.num_layers)
                .map(|_| GruLayerWeights::zeros(h, h))
                .collect(),
            out_w: DMatrix::zeros(config.state_dim, h),
            out_b: DVector::zeros(config.state_dim),
        }
    }

    /// Mutable flat views over every tensor, in a fixed order. Used by
    /// the optimizer and the serializer.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.in_w.as_mut_slice(), self.in_b.as_mut_slice()];
        for l in &mut self.layers {
            v.push(l.w_z.as_mut_slice());
            v.push(l.u_z.as_mut_slice());
            v.push(l.b_z.as_mut_slice());
            v.push(l.w_r.as_mut_slice());
            v.push(l.u_r.as_mut_slice());
            v.push(l.b_r.as_mut_slice());
            v.push(l.w_h.as_mut_slice());
            v.push(l.u_h.as_mut_slice());
            v.push(l.b_h.as_mut_slice());
        }
        v.push(self.out_w.as_mut_slice());
        v.push(self.out_b.as_mut_slice());
        v
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.in_w.as_slice(), self.in_b.as_slice()];
        for l in &self.layers {
            v.push(l.w_z.as_slice());
            v.push(l.u_z.as_slice());
            v.push(l.b_z.as_slice());
            v.push(l.w_r.as_slice());
            v.push(l.u_r.as_slice());
            v.push(l.b_r.as_slice());
            v.push(l.w_h.as_slice());
            v.push(l.u_h.as_slice());
            v.push(l.b_h.as_slice());
        }
        v.push(self.out_w.as_slice());
        v.push(self.out_b.as_slice());
        v
    }
}

/// The full predictor: input projection, GRU stack, output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

impl PredictorModel {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::zeros(&config);
        Ok(PredictorModel { config, params })
    }

    /// Uniform init scaled by fan-in, biases zero, reproducible from
    /// the seed. Values are rounded through `f32` so a freshly
    /// initialized model serializes losslessly.
    pub fn random_init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::zeros(&config);
        let fill = |m: &mut DMatrix<f64>, rng: &mut ChaCha8Rng| {
            let s = 1.0 / (m.ncols() as f64).sqrt();
            let dist = Uniform::new(-s, s);
            for v in m.iter_mut() {
                *v = quantize(dist.sample(rng));
            }
        };
        fill(&mut params.in_w, &mut rng);
        for l in &mut params.layers {
            fill(&mut l.w_z, &mut rng);
            fill(&mut l.u_z, &mut rng);
            fill(&mut l.w_r, &mut rng);
            fill(&mut l.u_r, &mut rng);
            fill(&mut l.w_h, &mut rng);
            fill(&mut l.u_h, &mut rng);
        }
        fill(&mut params.out_w, &mut rng);
        Ok(PredictorModel { config, params })
    }

    /// Rounds every weight to its nearest `f32`, the precision the
    /// on-disk format stores. The trainer calls this after each update.
    pub fn quantize_params(&mut self) {
        for s in self.params.slices_mut() {
            for v in s {
                *v = quantize(*v);
            }
        }
    }

    /// Gathers the masked-position + velocity feature vector.
    pub(crate) fn features(&self, state: &DVector<f64>, velocity: &DVector<f64>) -> DVector<f64> {
        let d = self.config.state_dim;
        debug_assert_eq!(state.len(), d);
        debug_assert_eq!(velocity.len(), d);
        let mut feat = DVector::zeros(self.config.feature_dim());
        let mut k = 0;
        for (i, &keep) in self.config.pos_input_mask.iter().enumerate() {
            if keep {
                feat[k] = state[i];
                k += 1;
            }
        }
        for i in 0..d {
            feat[k + i] = velocity[i];
        }
        feat
    }
}

/// One GRU cell update; see [`GruLayerWeights`] for the gate equations.
pub fn gru_cell_step(w: &GruLayerWeights, x: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
    gru_cell_step_cached(w, x, h).0
}

#[derive(Clone, Debug)]
pub(crate) struct GruCellCache {
    pub h_prev: DVector<f64>,
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub r: DVector<f64>,
    pub hc: DVector<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn gru_cell_step_cached(
    w: &GruLayerWeights,
    x: &DVector<f64>,
    h: &DVector<f64>,
) -> (DVector<f64>, GruCellCache) {
    let mut z = w.b_z.clone();
    z.gemv(1.0, &w.w_z, x, 1.0);
    z.gemv(1.0, &w.u_z, h, 1.0);
    z.apply(|v| *v = sigmoid(*v));

    let mut r = w.b_r.clone();
    r.gemv(1.0, &w.w_r, x, 1.0);
    r.gemv(1.0, &w.u_r, h, 1.0);
    r.apply(|v| *v = sigmoid(*v));

    let rh = r.component_mul(h);
    let mut hc = w.b_h.clone();
    hc.gemv(1.0, &w.w_h, x, 1.0);
    hc.gemv(1.0, &w.u_h, &rh, 1.0);
    hc.apply(|v| *v = v.tanh());

    let mut h_new = h.clone();
    for i in 0..h_new.len() {
        h_new[i] = (1.0 - z[i]) * h[i] + z[i] * hc[i];
    }
    let cache = GruCellCache {
        h_prev: h.clone(),
        x: x.clone(),
        z,
        r,
        hc,
    };
    (h_new, cache)
}

/// Validates that a trajectory can feed this model.
pub(crate) fn check_observed(model: &PredictorModel, observed: &crate::kinematics::Trajectory) -> Result<()> {
    check_dim(
        "observed trajectory dim",
        model.config.state_dim,
        observed.dim(),
    )?;
    if observed.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: observed.len(),
        });
    }
    let rel = (observed.frame_rate - model.config.frame_rate).abs()
        / model.config.frame_rate.max(f64::MIN_POSITIVE);
    if rel > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "trajectory frame rate {} does not match model frame rate {}",
            observed.frame_rate, model.config.frame_rate
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_weight_cell_halves_hidden_state() {
        let w = GruLayerWeights::zeros(3, 4);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let h = DVector::from_vec(vec![0.8, -0.4, 0.0, 1.2]);
        let h2 = gru_cell_step(&w, &x, &h);
        assert_eq!(h2, h * 0.5);
    }

    #[test]
    fn scalar_cell_matches_hand_arithmetic() {
        // 1-dimensional cell with distinct nonzero weights everywhere.
        let mut w = GruLayerWeights::zeros(1, 1);
        w.w_z[(0, 0)] = 0.5;
        w.u_z[(0, 0)] = -0.3;
        w.b_z[0] = 0.1;
        w.w_r[(0, 0)] = 0.7;
        w.u_r[(0, 0)] = 0.2;
        w.b_r[0] = -0.2;
        w.w_h[(0, 0)] = 1.1;
        w.u_h[(0, 0)] = 0.9;
        w.b_h[0] = 0.05;
        let (x, h) = (0.4, -0.6);

        // Written out plainly to serve as an independent oracle.
        let z = {
            let a: f64 = 0.5 * x + (-0.3) * h + 0.1;
            1.0 / (1.0 + (-a).exp())
        };
        let r = {
            let a: f64 = 0.7 * x + 0.2 * h - 0.2;
            1.0 / (1.0 + (-a).exp())
        };
        let hc = (1.1 * x + 0.9 * (r * h) + 0.05_f64).tanh();
        let expect = (1.0 - z) * h + z * hc;

        let got = gru_cell_step(
            &w,
            &DVector::from_vec(vec![x]),
            &DVector::from_vec(vec![h]),
        );
        assert_relative_eq!(got[0], expect, epsilon = 1e-15);
    }

    #[test]
    fn feature_vector_skips_base_position() {
        let config = ModelConfig::test_scale(12);
        let model = PredictorModel::zeros(config).unwrap();
        let state = DVector::from_fn(12, |i, _| i as f64);
        let vel = DVector::from_fn(12, |i, _| 100.0 + i as f64);
        let feat = model.features(&state, &vel);
        assert_eq!(feat.len(), 9 + 12);
        // Base position (state[0..3]) is absent; state[3] leads.
        assert_eq!(feat[0], 3.0);
        assert_eq!(feat[8], 11.0);
        assert_eq!(feat[9], 100.0);
        assert_eq!(feat[20], 111.0);
    }

    #[test]
    fn config_validation_catches_bad_mask() {
        let mut c = ModelConfig::test_scale(12);
        c.pos_input_mask.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn random_init_is_reproducible_and_f32_exact() {
        let c = ModelConfig::test_scale(12);
        let a = PredictorModel::random_init(c.clone(), 7).unwrap();
        let b = PredictorModel::random_init(c, 7).unwrap();
        assert_eq!(a.params, b.params);
        for s in a.params.slices() {
            for &v in s {
                assert_eq!(v, v as f32 as f64);
            }
        }
    }
}
