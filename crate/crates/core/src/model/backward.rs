//! Reverse-mode differentiation through the unrolled network.
//!
//! One backward sweep serves two customers: the trajectory optimizer,
//! which wants the gradient with respect to the injected velocity
//! perturbations, and the trainer, which wants gradients with respect
//! to the weights. Upstream gradients arrive per predicted state (and
//! optionally per encoder one-step prediction); everything else is
//! exact chain rule over the caches recorded during the forward pass.

use super::rollout::{RolloutResult, StepCache, Unrolled};
use super::{GruCellCache, GruLayerWeights, ModelParams, PredictorModel};
use crate::error::{check_dim, Result};
use nalgebra::DVector;

/// Upstream gradients entering the backward pass.
#[derive(Clone, Copy, Debug)]
pub struct BackwardUpstream<'a> {
    /// dC/d(state_k) for each predicted frame, length = horizon.
    pub d_states: &'a [DVector<f64>],
    /// dC/d(one-step prediction) for each encoder step, if the cost
    /// looks at the observed window (the training loss does).
    pub d_encoder_one_step: Option<&'a [DVector<f64>]>,
}

/// What the sweep produced.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// dC/d(delta_k), one vector per predicted frame.
    pub d_delta: Vec<DVector<f64>>,
    /// dC/d(weights), present when requested.
    pub d_params: Option<ModelParams>,
}

/// Backward through one GRU cell. Returns (d_input, d_hidden_prev) and
/// accumulates weight gradients when `grads` is given.
fn backward_cell(
    w: &GruLayerWeights,
    c: &GruCellCache,
    d_h_new: &DVector<f64>,
    grads: Option<&mut GruLayerWeights>,
) -> (DVector<f64>, DVector<f64>) {
    let h = &c.h_prev;
    let n = h.len();

    let mut dz = DVector::zeros(n);
    let mut dhc = DVector::zeros(n);
    let mut dh_prev = DVector::zeros(n);
    for i in 0..n {
        dz[i] = d_h_new[i] * (c.hc[i] - h[i]);
        dhc[i] = d_h_new[i] * c.z[i];
        dh_prev[i] = d_h_new[i] * (1.0 - c.z[i]);
    }

    // Pre-activation gradients.
    let mut da_h = dhc;
    for i in 0..n {
        da_h[i] *= 1.0 - c.hc[i] * c.hc[i];
    }
    let drh = w.u_h.tr_mul(&da_h);
    let mut dr = DVector::zeros(n);
    for i in 0..n {
        dr[i] = drh[i] * h[i];
        dh_prev[i] += drh[i] * c.r[i];
    }
    let mut da_z = dz;
    for i in 0..n {
        da_z[i] *= c.z[i] * (1.0 - c.z[i]);
    }
    let mut da_r = dr;
    for i in 0..n {
        da_r[i] *= c.r[i] * (1.0 - c.r[i]);
    }

    let mut dx = w.w_h.tr_mul(&da_h);
    dx.gemv_tr(1.0, &w.w_z, &da_z, 1.0);
    dx.gemv_tr(1.0, &w.w_r, &da_r, 1.0);
    dh_prev.gemv_tr(1.0, &w.u_z, &da_z, 1.0);
    dh_prev.gemv_tr(1.0, &w.u_r, &da_r, 1.0);

    if let Some(g) = grads {
        let rh = c.r.component_mul(h);
        g.w_h.ger(1.0, &da_h, &c.x, 1.0);
        g.u_h.ger(1.0, &da_h, &rh, 1.0);
        g.b_h += &da_h;
        g.w_z.ger(1.0, &da_z, &c.x, 1.0);
        g.u_z.ger(1.0, &da_z, h, 1.0);
        g.b_z += &da_z;
        g.w_r.ger(1.0, &da_r, &c.x, 1.0);
        g.u_r.ger(1.0, &da_r, h, 1.0);
        g.b_r += &da_r;
    }

    (dx, dh_prev)
}

/// Backward through one full step (output projection, GRU stack, input
/// projection). `d_out` is the gradient into the network's velocity
/// output; `d_hidden` carries per-layer recurrent gradients from the
/// following step and is replaced by the ones for the preceding step.
/// Returns the gradient into the concatenated input features when
/// `want_input` is set.
fn backward_step(
    model: &PredictorModel,
    step: &StepCache,
    d_out: Option<&DVector<f64>>,
    d_hidden: &mut [DVector<f64>],
    mut grads: Option<&mut ModelParams>,
    want_input: bool,
) -> Option<DVector<f64>> {
    let p = &model.params;
    let layers = p.layers.len();

    // Gradient into the top hidden state: recurrent carry plus the
    // output projection, when this step's output is used.
    let mut dh_top = d_hidden[layers - 1].clone();
    if let Some(d_out) = d_out {
        dh_top.gemv_tr(1.0, &p.out_w, d_out, 1.0);
        if let Some(g) = grads.as_deref_mut() {
            g.out_w.ger(1.0, d_out, &step.h_top, 1.0);
            g.out_b += d_out;
        }
    }

    let mut d_layer_out = dh_top;
    let mut dx0 = None;
    for l in (0..layers).rev() {
        let layer_grads = grads.as_deref_mut().map(|g| &mut g.layers[l]);
        let (dx, dh_prev) = backward_cell(&p.layers[l], &step.cells[l], &d_layer_out, layer_grads);
        d_hidden[l] = dh_prev;
        if l > 0 {
            // The input of layer l is layer l-1's hidden output at this
            // same step.
            d_layer_out = dx + &d_hidden[l - 1];
        } else {
            dx0 = Some(dx);
        }
    }
    let dx0 = dx0.expect("at least one layer");

    if let Some(g) = grads.as_deref_mut() {
        g.in_w.ger(1.0, &dx0, &step.feat, 1.0);
        g.in_b += &dx0;
    }
    if want_input {
        Some(model.params.in_w.tr_mul(&dx0))
    } else {
        None
    }
}

/// Splits a feature-space gradient back into state coordinates
/// (scattered through the position mask) and velocity coordinates.
fn split_feat(model: &PredictorModel, d_feat: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let d = model.config.state_dim;
    let mut d_pos = DVector::zeros(d);
    let mut k = 0;
    for (i, &keep) in model.config.pos_input_mask.iter().enumerate() {
        if keep {
            d_pos[i] = d_feat[k];
            k += 1;
        }
    }
    let mut d_vel = DVector::zeros(d);
    for i in 0..d {
        d_vel[i] = d_feat[k + i];
    }
    (d_pos, d_vel)
}

/// Full reverse sweep over a forward record.
pub(crate) fn backward_unrolled(
    model: &PredictorModel,
    cache: &Unrolled,
    upstream: &BackwardUpstream,
    want_params: bool,
) -> Result<Gradients> {
    let d = model.config.state_dim;
    let t = cache.dec.len();
    let m = cache.enc.len();
    check_dim("upstream state gradients", t, upstream.d_states.len())?;
    if let Some(e) = upstream.d_encoder_one_step {
        check_dim("upstream encoder gradients", m, e.len())?;
    }
    for g in upstream.d_states {
        check_dim("upstream state gradient dim", d, g.len())?;
    }

    let layers = model.params.layers.len();
    let h = model.config.hidden_size;
    let mut d_hidden = vec![DVector::zeros(h); layers];
    let mut grads = want_params.then(|| ModelParams::zeros(&model.config));

    let mut d_delta = vec![DVector::zeros(d); t];
    // Gradients flowing into the previous step's state and velocity
    // through the residual loop and the next step's inputs.
    let mut carry_s = DVector::zeros(d);
    let mut carry_v = DVector::zeros(d);
    for k in (0..t).rev() {
        // s_k = s_{k-1} + v_k, and v_k = v_hat_k + delta_k feeds both
        // the residual and the next step's velocity input.
        let gs = &upstream.d_states[k] + &carry_s;
        let gv = &gs + &carry_v;
        d_delta[k] = gv.clone();
        let d_feat = backward_step(
            model,
            &cache.dec[k],
            Some(&gv),
            &mut d_hidden,
            grads.as_mut(),
            true,
        )
        .expect("input gradient requested");
        let (d_pos, d_vel) = split_feat(model, &d_feat);
        carry_s = gs + d_pos;
        carry_v = d_vel;
    }
    // carry_s / carry_v now point at the last observed frame and its
    // velocity, which are constants.

    // The encoder influences the decoder only through hidden state and
    // weights, so the sweep continues only when weights (or encoder
    // one-step costs) are wanted; delta gradients are already complete.
    if want_params || upstream.d_encoder_one_step.is_some() {
        for j in (0..m).rev() {
            let d_out = upstream.d_encoder_one_step.map(|e| &e[j]);
            backward_step(
                model,
                &cache.enc[j],
                d_out,
                &mut d_hidden,
                grads.as_mut(),
                false,
            );
        }
    }

    Ok(Gradients {
        d_delta,
        d_params: grads,
    })
}

/// Gradient of a rollout-dependent cost with respect to the injected
/// perturbations, given per-state upstream gradients.
pub fn grad_delta(
    model: &PredictorModel,
    result: &RolloutResult,
    d_states: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let up = BackwardUpstream {
        d_states,
        d_encoder_one_step: None,
    };
    Ok(backward_unrolled(model, &result.cache, &up, false)?.d_delta)
}

/// Gradient including weights, for training.
pub fn grad_full(
    model: &PredictorModel,
    result: &RolloutResult,
    upstream: &BackwardUpstream,
) -> Result<Gradients> {
    backward_unrolled(model, &result.cache, upstream, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{StateLayout, Trajectory};
    use crate::model::{rollout, DeltaInput, ModelConfig, PredictorModel};

    #[test]
    fn zero_weight_single_step_gradient_is_identity() {
        // With zero weights and one predicted step, the perturbation
        // passes straight through the residual connection, so the
        // upstream state gradient comes back unchanged.
        let d = 12;
        let model = PredictorModel::zeros(ModelConfig::test_scale(d)).unwrap();
        let obs = Trajectory::new(
            30.0,
            StateLayout::Human { joints: 2 },
            vec![DVector::from_element(d, 0.3); 3],
        )
        .unwrap();
        let r = rollout(&model, &obs, &DeltaInput::zeros(1, d), 1).unwrap();
        let upstream = vec![DVector::from_fn(d, |i, _| (i as f64) - 4.0)];
        let g = grad_delta(&model, &r, &upstream).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0], upstream[0]);
    }

    #[test]
    fn zero_weight_gradient_accumulates_over_horizon() {
        // States are cumulative sums of deltas, so dC/d(delta_k) is the
        // sum of upstream gradients from step k onward.
        let d = 12;
        let model = PredictorModel::zeros(ModelConfig::test_scale(d)).unwrap();
        let obs = Trajectory::new(
            30.0,
            StateLayout::Human { joints: 2 },
            vec![DVector::from_element(d, 0.0); 3],
        )
        .unwrap();
        let t = 4;
        let r = rollout(&model, &obs, &DeltaInput::zeros(t, d), t).unwrap();
        let upstream: Vec<_> = (0..t)
            .map(|k| DVector::from_element(d, (k + 1) as f64))
            .collect();
        let g = grad_delta(&model, &r, &upstream).unwrap();
        // Tail sums: 1+2+3+4, 2+3+4, 3+4, 4.
        for (k, expect) in [10.0, 9.0, 7.0, 4.0].into_iter().enumerate() {
            assert_eq!(g[k], DVector::from_element(d, expect));
        }
    }

    #[test]
    fn upstream_length_is_validated() {
        let d = 12;
        let model = PredictorModel::zeros(ModelConfig::test_scale(d)).unwrap();
        let obs = Trajectory::new(
            30.0,
            StateLayout::Human { joints: 2 },
            vec![DVector::zeros(d); 3],
        )
        .unwrap();
        let r = rollout(&model, &obs, &DeltaInput::zeros(2, d), 2).unwrap();
        let bad = vec![DVector::zeros(d); 3];
        assert!(grad_delta(&model, &r, &bad).is_err());
    }
}
