//! End-to-end forward and backward for one sample:
//! embedding lookup → pooling (ASTA or mean) → interaction (QNN or MLP) → head.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::asta::{asta_backward, asta_forward, mean_pool_backward, mean_pool_forward, AttentionConfig, AttentionTrace, InputGrads, MeanPoolTrace};
use crate::config::{HyperParams, Interaction, Pooling};
use crate::embedding::{accumulate_id_grad, lookup_sample_sequence, lookup_target, EmbeddingStore, ItemEmbeddings, Sample};
use crate::error::{QinError, Result};
use crate::linalg::SeededRng;
use crate::metrics::{bce_loss, head_backward, head_forward};
use crate::params::{Gradients, ModelParams};
use crate::qnn::{assemble_x1, mlp_backward, mlp_forward, qnn_backward, qnn_forward, MlpTrace, QnnSettings, QnnTrace};

#[derive(Debug, Clone)]
pub enum PoolTrace {
    Asta(AttentionTrace),
    Mean(MeanPoolTrace),
}

#[derive(Debug, Clone)]
pub enum InteractionTrace {
    Qnn(QnnTrace),
    Mlp(MlpTrace),
}

#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub target_id: usize,
    pub seq_ids: Vec<usize>,
    pub pool: PoolTrace,
    pub x1: Vec<f64>,
    pub interaction: InteractionTrace,
    pub x_l: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

/// Architecture resolved from [`HyperParams`]; stateless apart from config.
#[derive(Debug, Clone)]
pub struct Qin {
    pub hp: HyperParams,
    pub attention: AttentionConfig,
    pub qnn: QnnSettings,
}

impl Qin {
    pub fn new(hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        Ok(Qin {
            attention: AttentionConfig::from_hp(&hp),
            qnn: QnnSettings::from_hp(&hp),
            hp,
        })
    }

    /// Checks that `store` is the table this model was configured for.
    pub fn check_store(&self, store: &EmbeddingStore) -> Result<()> {
        if store.count() != self.hp.n_items || store.dim() != self.hp.frozen_dim {
            return Err(QinError::Config(format!(
                "embedding store is {}×{}, model expects {}×{}",
                store.count(),
                store.dim(),
                self.hp.n_items,
                self.hp.frozen_dim
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        params: &ModelParams,
        store: &EmbeddingStore,
        sample: &Sample,
        mut dropout: Option<&mut SeededRng>,
    ) -> Result<SampleTrace> {
        let hp = &self.hp;
        let items = ItemEmbeddings::new(store, &params.id_embedding)?;
        let x_t = lookup_target(&items, sample.target_id, hp.d_t())?;
        let x_b = lookup_sample_sequence(&items, &sample.seq_ids, hp.seq_len)?;
        let mut mask = vec![0u8; hp.seq_len];
        mask[..sample.seq_len()].fill(1);

        let (o, pool) = match hp.pooling {
            Pooling::Asta => {
                let (o, t) = asta_forward(&params.attention, &self.attention, &x_t, &x_b, &mask, dropout.as_deref_mut())?;
                (o, PoolTrace::Asta(t))
            }
            Pooling::Mean => {
                let (o, t) = mean_pool_forward(&params.attention.w_v, &x_t, &x_b, &mask)?;
                (o, PoolTrace::Mean(t))
            }
        };
        let x1 = assemble_x1(&x_t, &o, hp.d())?;
        let (x_l, interaction) = match hp.interaction {
            Interaction::Qnn => {
                let (x, t) = qnn_forward(&params.qnn, &self.qnn, &x1, dropout.as_deref_mut())?;
                (x, InteractionTrace::Qnn(t))
            }
            Interaction::Mlp => {
                let (x, t) = mlp_forward(&params.mlp, hp.dropout, &x1, dropout.as_deref_mut())?;
                (x, InteractionTrace::Mlp(t))
            }
        };
        let (logit, prob) = head_forward(&params.head, &x_l)?;
        Ok(SampleTrace {
            target_id: sample.target_id,
            seq_ids: sample.seq_ids.clone(),
            pool,
            x1,
            interaction,
            x_l,
            logit,
            prob,
        })
    }

    /// Accumulates `dL/dθ` for one sample given `dL/dlogit`.
    pub fn backward(&self, params: &ModelParams, trace: &SampleTrace, dlogit: f64, grads: &mut Gradients) -> Result<()> {
        let hp = &self.hp;
        let g: &mut ModelParams = grads;
        let dx_l = head_backward(&params.head, &trace.x_l, dlogit, &mut g.head);
        let dx1 = match &trace.interaction {
            InteractionTrace::Qnn(t) => qnn_backward(&params.qnn, &self.qnn, t, &dx_l, &mut g.qnn)?,
            InteractionTrace::Mlp(t) => mlp_backward(&params.mlp, t, &dx_l, &mut g.mlp)?,
        };
        let d_t = hp.d_t();
        let (dx_t_direct, d_o) = dx1.split_at(d_t);
        let InputGrads { x_t: mut dx_t, x_b: dx_b } = match &trace.pool {
            PoolTrace::Asta(t) => asta_backward(&params.attention, &self.attention, t, d_o, &mut g.attention)?,
            PoolTrace::Mean(t) => mean_pool_backward(&params.attention.w_v, t, d_o, &mut g.attention.w_v)?,
        };
        dx_t.iter_mut().zip(dx_t_direct).for_each(|(a, b)| *a += b);

        accumulate_id_grad(&mut g.id_embedding, hp.frozen_dim, trace.target_id, &dx_t);
        for (s, &id) in trace.seq_ids.iter().enumerate() {
            accumulate_id_grad(&mut g.id_embedding, hp.frozen_dim, id, dx_b.row(s));
        }
        Ok(())
    }

    /// Logits with dropout disabled.
    pub fn predict_logits(&self, params: &ModelParams, store: &EmbeddingStore, samples: &[Sample]) -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|s| self.forward(params, store, s, None).map(|t| t.logit))
            .collect()
    }

    /// Mean BCE over `samples`, accumulating its gradient into `grads`.
    ///
    /// With `dropout_key = Some((seed, step))`, sample `i` draws its dropout
    /// masks from `SeededRng::derive(seed, [step, i])`; `None` runs in eval mode.
    pub fn batch_loss_and_grad(
        &self,
        params: &ModelParams,
        store: &EmbeddingStore,
        samples: &[Sample],
        dropout_key: Option<(u64, u64)>,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let n = samples.len();
        if n == 0 {
            return Ok(0.0);
        }
        let mut probs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (i, sample) in samples.iter().enumerate() {
            let mut rng = dropout_key.map(|(seed, step)| SeededRng::derive(seed, &[step, i as u64]));
            let trace = self.forward(params, store, sample, rng.as_mut())?;
            let dlogit = (trace.prob - sample.label as f64) / n as f64;
            self.backward(params, &trace, dlogit, grads)?;
            probs.push(trace.prob);
            labels.push(sample.label);
        }
        bce_loss(&probs, &labels)
    }

    /// Smallest distance of any kinked pre-activation from its kink.
    pub fn kink_margin(&self, trace: &SampleTrace) -> f64 {
        let pool = match &trace.pool {
            PoolTrace::Asta(t) => t.kink_margin(),
            PoolTrace::Mean(_) => f64::INFINITY,
        };
        let inter = match &trace.interaction {
            InteractionTrace::Qnn(t) => t.kink_margin(&self.qnn),
            InteractionTrace::Mlp(t) => t.kink_margin(),
        };
        pool.min(inter)
    }

    /// Hash of which side of each kink every pre-activation lies on.
    pub fn activation_pattern(&self, trace: &SampleTrace, hasher: &mut DefaultHasher) {
        if let PoolTrace::Asta(t) = &trace.pool {
            t.pattern().for_each(|b| b.hash(hasher));
        }
        match &trace.interaction {
            InteractionTrace::Qnn(t) => t.pattern(&self.qnn).for_each(|b| b.hash(hasher)),
            InteractionTrace::Mlp(t) => t.pattern().for_each(|b| b.hash(hasher)),
        }
    }

    /// Loss plus kink diagnostics for the gradient checker.
    pub fn probe(
        &self,
        params: &ModelParams,
        store: &EmbeddingStore,
        samples: &[Sample],
        dropout_key: Option<(u64, u64)>,
    ) -> Result<(f64, f64, u64)> {
        let mut probs = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        let mut margin = f64::INFINITY;
        let mut hasher = DefaultHasher::new();
        for (i, sample) in samples.iter().enumerate() {
            let mut rng = dropout_key.map(|(seed, step)| SeededRng::derive(seed, &[step, i as u64]));
            let trace = self.forward(params, store, sample, rng.as_mut())?;
            margin = margin.min(self.kink_margin(&trace));
            self.activation_pattern(&trace, &mut hasher);
            probs.push(trace.prob);
            labels.push(sample.label);
        }
        Ok((bce_loss(&probs, &labels)?, margin, hasher.finish()))
    }
}
