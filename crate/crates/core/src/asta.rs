//! Target attention over the behavior sequence.
//!
//! The target embedding is the query, behaviors are keys and values:
//!
//! ```text
//! Q = W_q x_t,  K_s = W_k x_b[s],  V_s = W_v x_b[s]
//! a_s = (Q · K_s) / sqrt(d_a)
//! w   = transform(a)               relu (default) | softmax | relu² | silu
//! o   = Σ_s w_s V_s + x_t
//! ```
//!
//! With `relu` the weights are unnormalized and exactly sparse. The `+ x_t`
//! residual is applied for every transform so the variants differ only in the
//! score transform. Padded positions contribute exactly zero: softmax sees
//! them as `-inf`, the pointwise transforms are zeroed after the fact, and
//! their keys and values are never computed.

use crate::config::{AttnKind, HyperParams};
use crate::error::{QinError, Result};
use crate::linalg::{dot, Matrix, SeededRng, Unary};
use crate::params::AttentionParams;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub kind: AttnKind,
    /// Always `d_a^-1/2`.
    pub scale: f64,
    /// Inverted dropout on the transformed weights, training only.
    pub dropout_p: Option<f64>,
    pub d_a: usize,
    pub d_t: usize,
    pub d_b: usize,
    pub seq_len: usize,
}

impl AttentionConfig {
    pub fn new(kind: AttnKind, d_a: usize, d_t: usize, d_b: usize, seq_len: usize) -> Self {
        AttentionConfig {
            kind,
            scale: 1.0 / (d_a as f64).sqrt(),
            dropout_p: None,
            d_a,
            d_t,
            d_b,
            seq_len,
        }
    }

    pub fn from_hp(hp: &HyperParams) -> Self {
        let mut cfg = AttentionConfig::new(hp.attn_kind, hp.d_a, hp.d_t(), hp.d_b(), hp.seq_len);
        if hp.attn_dropout && hp.attn_dropout_p > 0.0 {
            cfg.dropout_p = Some(hp.attn_dropout_p);
        }
        cfg
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = Some(p);
        self
    }

    fn check_params(&self, p: &AttentionParams) -> Result<()> {
        let want = [
            ("W_q", p.w_q.shape(), [self.d_a, self.d_t]),
            ("W_k", p.w_k.shape(), [self.d_a, self.d_b]),
            ("W_v", p.w_v.shape(), [self.d_a, self.d_b]),
        ];
        for (_, got, exp) in want {
            if got != exp {
                return Err(QinError::dims("attention weights", &got, &exp));
            }
        }
        Ok(())
    }
}

/// Everything the backward pass needs, including the replayable dropout mask.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub kind: AttnKind,
    pub x_t: Vec<f64>,
    pub x_b: Matrix,
    pub mask: Vec<u8>,
    pub q: Vec<f64>,
    /// `S × d_a`; rows at masked positions are zero.
    pub k: Matrix,
    pub v: Matrix,
    /// Scaled scores; 0 at masked positions.
    pub scores: Vec<f64>,
    /// Transformed, masked weights before dropout.
    pub weights: Vec<f64>,
    /// Dropout multipliers (0 or `1/(1-p)`), if dropout ran.
    pub keep: Option<Vec<f64>>,
    pub o: Vec<f64>,
}

impl AttentionTrace {
    fn effective_weight(&self, s: usize) -> f64 {
        match &self.keep {
            Some(k) => self.weights[s] * k[s],
            None => self.weights[s],
        }
    }

    /// Smallest `|score|` over live positions where the transform has a kink.
    pub fn kink_margin(&self) -> f64 {
        if !matches!(self.kind, AttnKind::Relu | AttnKind::Relu2) {
            return f64::INFINITY;
        }
        self.live_positions()
            .map(|s| self.scores[s].abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Sign pattern of live scores, for detecting kink crossings.
    pub fn pattern(&self) -> impl Iterator<Item = bool> + '_ {
        let kinked = matches!(self.kind, AttnKind::Relu | AttnKind::Relu2);
        self.live_positions()
            .filter(move |_| kinked)
            .map(|s| self.scores[s] > 0.0)
    }

    fn live_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m != 0).map(|(s, _)| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub x_t: Vec<f64>,
    /// `S × d_b`; zero at masked positions.
    pub x_b: Matrix,
}

pub fn asta_forward(
    params: &AttentionParams,
    cfg: &AttentionConfig,
    x_t: &[f64],
    x_b: &Matrix,
    mask: &[u8],
    dropout: Option<&mut SeededRng>,
) -> Result<(Vec<f64>, AttentionTrace)> {
    cfg.check_params(params)?;
    if x_t.len() != cfg.d_t {
        return Err(QinError::dims("asta_forward x_t", &[cfg.d_t], &[x_t.len()]));
    }
    if x_b.shape() != [cfg.seq_len, cfg.d_b] {
        return Err(QinError::dims("asta_forward x_b", &[cfg.seq_len, cfg.d_b], &x_b.shape()));
    }
    if mask.len() != cfg.seq_len {
        return Err(QinError::dims("asta_forward mask", &[cfg.seq_len], &[mask.len()]));
    }
    if cfg.d_a != cfg.d_t {
        return Err(QinError::Config("target residual needs d_a == d_t".into()));
    }

    let s_len = cfg.seq_len;
    let q = params.w_q.matvec(x_t)?;
    let mut k = Matrix::zeros(s_len, cfg.d_a);
    let mut v = Matrix::zeros(s_len, cfg.d_a);
    let mut scores = vec![0.0; s_len];
    for s in 0..s_len {
        if mask[s] == 0 {
            continue;
        }
        let xs = x_b.row(s);
        for a in 0..cfg.d_a {
            k.set(s, a, dot(params.w_k.row(a), xs));
            v.set(s, a, dot(params.w_v.row(a), xs));
        }
        scores[s] = dot(&q, k.row(s)) * cfg.scale;
    }

    let mut weights = vec![0.0; s_len];
    match cfg.kind {
        AttnKind::Softmax => {
            let max = (0..s_len)
                .filter(|&s| mask[s] != 0)
                .map(|s| scores[s])
                .fold(f64::NEG_INFINITY, f64::max);
            if max.is_finite() {
                let mut total = 0.0;
                for s in 0..s_len {
                    if mask[s] != 0 {
                        weights[s] = (scores[s] - max).exp();
                        total += weights[s];
                    }
                }
                weights.iter_mut().for_each(|w| *w /= total);
            }
        }
        kind => {
            let f = pointwise(kind);
            for s in 0..s_len {
                if mask[s] != 0 {
                    weights[s] = f.apply(scores[s]);
                }
            }
        }
    }

    let keep = match (cfg.dropout_p, dropout) {
        (Some(p), Some(rng)) if p > 0.0 => {
            let scale = 1.0 / (1.0 - p);
            Some(
                (0..s_len)
                    .map(|s| {
                        if mask[s] == 0 {
                            0.0
                        } else if rng.uniform() < p {
                            0.0
                        } else {
                            scale
                        }
                    })
                    .collect::<Vec<_>>(),
            )
        }
        _ => None,
    };

    let mut trace = AttentionTrace {
        kind: cfg.kind,
        x_t: x_t.to_vec(),
        x_b: x_b.clone(),
        mask: mask.to_vec(),
        q,
        k,
        v,
        scores,
        weights,
        keep,
        o: x_t.to_vec(),
    };
    for s in 0..s_len {
        if mask[s] == 0 {
            continue;
        }
        let w = trace.effective_weight(s);
        if w != 0.0 {
            for a in 0..cfg.d_a {
                trace.o[a] += w * trace.v.get(s, a);
            }
        }
    }
    Ok((trace.o.clone(), trace))
}

fn pointwise(kind: AttnKind) -> Unary {
    match kind {
        AttnKind::Relu => Unary::Relu,
        AttnKind::Relu2 => Unary::Relu2,
        AttnKind::Silu => Unary::Silu,
        AttnKind::Softmax => unreachable!("softmax is not pointwise"),
    }
}

/// Reverse-mode pass. Accumulates into `grads` and returns input gradients.
pub fn asta_backward(
    params: &AttentionParams,
    cfg: &AttentionConfig,
    trace: &AttentionTrace,
    upstream: &[f64],
    grads: &mut AttentionParams,
) -> Result<InputGrads> {
    if trace.kind != cfg.kind || trace.mask.len() != cfg.seq_len || trace.q.len() != cfg.d_a {
        return Err(QinError::TraceMismatch("attention trace was produced under a different config".into()));
    }
    if upstream.len() != cfg.d_a {
        return Err(QinError::dims("asta_backward upstream", &[cfg.d_a], &[upstream.len()]));
    }
    let s_len = cfg.seq_len;
    let live: Vec<usize> = (0..s_len).filter(|&s| trace.mask[s] != 0).collect();

    // Residual.
    let mut dx_t = upstream.to_vec();
    let mut dx_b = Matrix::zeros(s_len, cfg.d_b);

    // o = Σ w'_s V_s:  dV_s = w'_s g,  dw_s = keep_s (g · V_s).
    let mut dw = vec![0.0; s_len];
    let mut dk = Matrix::zeros(s_len, cfg.d_a);
    let back_v = params.w_v.matvec_t(upstream)?;
    for &s in &live {
        let keep = trace.keep.as_ref().map_or(1.0, |k| k[s]);
        dw[s] = keep * dot(upstream, trace.v.row(s));
        let w_eff = trace.effective_weight(s);
        if w_eff != 0.0 {
            grads.w_v.add_outer(w_eff, upstream, trace.x_b.row(s));
            for (d, b) in dx_b.row_mut(s).iter_mut().zip(&back_v) {
                *d += w_eff * b;
            }
        }
    }

    // Through the transform to the scaled scores.
    let mut da = vec![0.0; s_len];
    match cfg.kind {
        AttnKind::Softmax => {
            let inner: f64 = live.iter().map(|&s| trace.weights[s] * dw[s]).sum();
            for &s in &live {
                da[s] = trace.weights[s] * (dw[s] - inner);
            }
        }
        kind => {
            let f = pointwise(kind);
            for &s in &live {
                da[s] = dw[s] * f.derivative(trace.scores[s]);
            }
        }
    }

    // a_s = scale · Q·K_s.
    let mut dq = vec![0.0; cfg.d_a];
    for &s in &live {
        let g = da[s] * cfg.scale;
        if g == 0.0 {
            continue;
        }
        for a in 0..cfg.d_a {
            dq[a] += g * trace.k.get(s, a);
            dk.set(s, a, g * trace.q[a]);
        }
    }
    for &s in &live {
        let dks = dk.row(s);
        if dks.iter().all(|&v| v == 0.0) {
            continue;
        }
        grads.w_k.add_outer(1.0, dks, trace.x_b.row(s));
        let back = params.w_k.matvec_t(dks)?;
        for (d, b) in dx_b.row_mut(s).iter_mut().zip(back) {
            *d += b;
        }
    }
    grads.w_q.add_outer(1.0, &dq, &trace.x_t);
    let back = params.w_q.matvec_t(&dq)?;
    for (d, b) in dx_t.iter_mut().zip(back) {
        *d += b;
    }
    Ok(InputGrads { x_t: dx_t, x_b: dx_b })
}

#[derive(Debug, Clone)]
pub struct MeanPoolTrace {
    pub x_t: Vec<f64>,
    pub x_b: Matrix,
    pub mask: Vec<u8>,
    /// Mean of the live rows of `x_b` (zero when the history is empty).
    pub mean: Vec<f64>,
    pub count: usize,
}

/// `o = W_v · mean(live rows of x_b) + x_t`; an empty history gives `x_t`.
pub fn mean_pool_forward(w_v: &Matrix, x_t: &[f64], x_b: &Matrix, mask: &[u8]) -> Result<(Vec<f64>, MeanPoolTrace)> {
    if w_v.cols() != x_b.cols() || w_v.rows() != x_t.len() || mask.len() != x_b.rows() {
        return Err(QinError::dims("mean_pool_forward", &w_v.shape(), &[x_t.len(), x_b.rows(), x_b.cols()]));
    }
    let count = mask.iter().filter(|&&m| m != 0).count();
    let mut mean = vec![0.0; x_b.cols()];
    for (s, &m) in mask.iter().enumerate() {
        if m != 0 {
            for (acc, v) in mean.iter_mut().zip(x_b.row(s)) {
                *acc += v;
            }
        }
    }
    let mut o = x_t.to_vec();
    if count > 0 {
        let inv = 1.0 / count as f64;
        mean.iter_mut().for_each(|v| *v *= inv);
        for (oi, pi) in o.iter_mut().zip(w_v.matvec(&mean)?) {
            *oi += pi;
        }
    }
    let trace = MeanPoolTrace {
        x_t: x_t.to_vec(),
        x_b: x_b.clone(),
        mask: mask.to_vec(),
        mean,
        count,
    };
    Ok((o, trace))
}

pub fn mean_pool_backward(w_v: &Matrix, trace: &MeanPoolTrace, upstream: &[f64], grad_w_v: &mut Matrix) -> Result<InputGrads> {
    if upstream.len() != w_v.rows() {
        return Err(QinError::dims("mean_pool_backward", &[w_v.rows()], &[upstream.len()]));
    }
    let mut dx_b = Matrix::zeros(trace.x_b.rows(), trace.x_b.cols());
    if trace.count > 0 {
        grad_w_v.add_outer(1.0, upstream, &trace.mean);
        let back = w_v.matvec_t(upstream)?;
        let inv = 1.0 / trace.count as f64;
        for (s, &m) in trace.mask.iter().enumerate() {
            if m != 0 {
                for (d, b) in dx_b.row_mut(s).iter_mut().zip(&back) {
                    *d = b * inv;
                }
            }
        }
    }
    Ok(InputGrads {
        x_t: upstream.to_vec(),
        x_b: dx_b,
    })
}

/// Standalone softmax over the live positions, exactly 0 elsewhere.
pub fn masked_softmax(scores: &[f64], mask: &[u8]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; scores.len()];
    }
    let e: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| if m != 0 { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}
