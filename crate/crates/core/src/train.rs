//! Epoch loop with seeded shuffling, early stopping on validation AUC, and evaluation.

use std::fmt;

use crate::config::TrainConfig;
use crate::datagen::make_batches;
use crate::embedding::{EmbeddingStore, Sample};
use crate::error::{QinError, Result};
use crate::linalg::{sigmoid, SeededRng};
use crate::metrics::{metrics_from_probs, Metrics};
use crate::model::Qin;
use crate::optim::{adam_step, AdamState};
use crate::params::{init_params, Gradients, ModelParams};

/// Derivation path tag for the per-epoch shuffle stream. Dropout streams use
/// `[step, sample]`, and no step reaches this value.
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} val_auc={:.6} val_logloss={:.6}",
            self.epoch, self.loss, self.val_auc, self.val_logloss
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation AUC, or the
    /// initial parameters when no epoch ran.
    pub best: ModelParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|e| self.history.iter().find(|r| r.epoch == e))
    }
}

pub fn predict_probs(qin: &Qin, params: &ModelParams, store: &EmbeddingStore, samples: &[Sample]) -> Result<Vec<f64>> {
    Ok(qin.predict_logits(params, store, samples)?.into_iter().map(sigmoid).collect())
}

/// Full pass with dropout disabled.
pub fn evaluate(qin: &Qin, params: &ModelParams, store: &EmbeddingStore, samples: &[Sample]) -> Result<Metrics> {
    let probs = predict_probs(qin, params, store, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    metrics_from_probs(&probs, &labels)
}

/// Initializes parameters from `cfg.seed` and trains.
pub fn init_and_train(qin: &Qin, store: &EmbeddingStore, train_set: &[Sample], valid: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = init_params(&qin.hp, &mut SeededRng::new(cfg.seed))?;
    train(qin, init, store, train_set, valid, cfg)
}

pub fn train(qin: &Qin, init: ModelParams, store: &EmbeddingStore, train: &[Sample], valid: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(qin, init, store, train, valid, cfg, |_| {})
}

/// [`train`], calling `on_epoch` after each epoch is evaluated.
pub fn train_observed(
    qin: &Qin,
    init: ModelParams,
    store: &EmbeddingStore,
    train: &[Sample],
    valid: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    qin.check_store(store)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { best: init, best_epoch: None, history: Vec::new() });
    }
    if train.is_empty() {
        return Err(QinError::Config("training split is empty".into()));
    }
    let (pos, neg) = valid.iter().fold((0, 0), |(p, n), s| if s.label != 0 { (p + 1, n) } else { (p, n + 1) });
    if pos == 0 || neg == 0 {
        return Err(QinError::SingleClass);
    }

    let mut params = init;
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_auc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut state = AdamState::new(&params);
    let mut grads = Gradients::zeros_like(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        let mut shuffle = SeededRng::derive(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]);
        let batches = make_batches(train, cfg.batch_size, qin.hp.seq_len, &mut shuffle)?;
        let mut loss_sum = 0.0;
        for batch in &batches {
            grads.zero();
            let loss = qin.batch_loss_and_grad(&params, store, &batch.samples, Some((cfg.seed, step)), &mut grads)?;
            if !loss.is_finite() {
                return Err(QinError::NonFiniteLoss { epoch, step: step as usize, loss });
            }
            adam_step(&mut params, &grads, &mut state, cfg)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let metrics = evaluate(qin, &params, store, valid)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train.len() as f64,
            val_auc: metrics.auc,
            val_logloss: metrics.logloss,
        };
        on_epoch(&record);
        history.push(record);
        if metrics.auc > best_auc {
            best_auc = metrics.auc;
            best = params.clone();
            best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { best, best_epoch, history })
}
