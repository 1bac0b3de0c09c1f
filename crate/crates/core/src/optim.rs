//! Adam with coupled L2 decay on the id-embedding table only.

use crate::config::TrainConfig;
use crate::error::{QinError, Result};
use crate::params::{Gradients, ModelParams, ParamClass};

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let m = Gradients::zeros_like(params).into_inner();
        AdamState { v: m.clone(), m, step: 0 }
    }
}

struct Hyper {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias1: f64,
    bias2: f64,
}

fn update_slice(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], decay: f64, h: &Hyper) {
    for i in 0..theta.len() {
        let gi = g[i] + decay * theta[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
        let m_hat = m[i] / h.bias1;
        let v_hat = v[i] / h.bias2;
        theta[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

fn same_layout(a: &ModelParams, b: &ModelParams) -> bool {
    let (sa, sb) = (a.slots(), b.slots());
    sa.len() == sb.len() && sa.iter().zip(&sb).all(|(x, y)| x.name == y.name && x.shape == y.shape)
}

/// One Adam update. The step counter is incremented before bias correction.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if !same_layout(params, grads) || !same_layout(params, &state.m) || !same_layout(params, &state.v) {
        return Err(QinError::dims("adam_step", &[params.num_values()], &[grads.num_values()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let h = Hyper {
        lr: cfg.lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        bias1: 1.0 - cfg.adam_beta1.powi(t),
        bias2: 1.0 - cfg.adam_beta2.powi(t),
    };
    let g_slots = grads.slots();
    let m_slots = state.m.slots_mut();
    let v_slots = state.v.slots_mut();
    for (((p, g), m), v) in params.slots_mut().into_iter().zip(g_slots).zip(m_slots).zip(v_slots) {
        let decay = if p.class == ParamClass::Embedding { cfg.emb_weight_decay } else { 0.0 };
        update_slice(p.data, g.data, m.data, v.data, decay, &h);
    }
    Ok(())
}
