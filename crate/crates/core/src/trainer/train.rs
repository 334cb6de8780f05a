use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{SamplerKind, TrainConfig};
use super::loss::compute_class_weights;
use super::optim::{clip_store_grads, AdamW};
use super::sampler::{shuffle_batches, BalancedSampler};
use super::schedule::cosine_warmup_lr;
use crate::augment::{augment_example, AugmentConfig};
use crate::dataio::Example;
use crate::diffcore::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::evalens::metrics;
use crate::fusion::FusionModel;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub val_micro_f1: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters are in `best_params`.
    pub best_epoch: usize,
    pub best_params: ParamStore,
    pub total_steps: usize,
}

fn stream_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

enum Batcher {
    Shuffle { n: usize },
    Balanced(BalancedSampler),
}

impl Batcher {
    fn batches_per_epoch(&self, batch_size: usize) -> usize {
        match self {
            Batcher::Shuffle { n } => n.div_ceil(batch_size),
            Batcher::Balanced(s) => s.batches_per_epoch(batch_size),
        }
    }

    fn epoch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        match self {
            Batcher::Shuffle { n } => shuffle_batches(*n, batch_size, rng),
            Batcher::Balanced(s) => s.epoch(batch_size, rng),
        }
    }
}

/// Evaluation-mode metrics of `model` on `examples`.
pub fn evaluate_model(
    model: &FusionModel,
    store: &ParamStore,
    examples: &[Example],
) -> Result<crate::evalens::Metrics> {
    let preds = model.predict(store, examples)?;
    let refs: Vec<usize> = examples.iter().map(|e| e.label).collect();
    metrics(&refs, &preds, model.cfg.num_classes)
}

/// Full training loop: augment, forward, loss, backward, clip, AdamW with the
/// scheduled rate; validation after every epoch; keeps the parameters of the
/// epoch with the highest validation macro-F1 (earliest on ties).
pub fn train(
    model: &FusionModel,
    store: &mut ParamStore,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    aug.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation sets must be nonempty"));
    }
    let k = model.cfg.num_classes;
    let labels: Vec<usize> = train_set.iter().map(|e| e.label).collect();
    let mut counts = vec![0usize; k];
    for &l in &labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::data(format!("label {l} is outside the {k} model classes")))? += 1;
    }
    let weights = compute_class_weights(&counts, None)?;

    let mut batcher = match cfg.sampler {
        SamplerKind::Shuffle => Batcher::Shuffle { n: train_set.len() },
        SamplerKind::Balanced => Batcher::Balanced(BalancedSampler::new(&labels, k)?),
    };
    let total_steps = cfg.epochs * batcher.batches_per_epoch(cfg.batch_size);
    cosine_warmup_lr(0, total_steps, cfg)?;

    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "order", 0));
    let mut opt = AdamW::new(store);
    let gamma = cfg.gamma();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0usize;
    let mut lr = 0.0;

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = batcher.epoch(cfg.batch_size, &mut order_rng);
        let n_batches = batches.len();
        for batch in batches {
            lr = cosine_warmup_lr(step + 1, total_steps, cfg)?;
            let examples: Vec<Example> = batch
                .iter()
                .map(|&i| {
                    if aug.apply_prob > 0.0 {
                        augment_example(&train_set[i], aug, epoch as u64)
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Example> = examples.iter().collect();

            let (loss, grads, buffers) = {
                let mut tape = Tape::training(store, stream_seed(cfg.seed, "dropout", step as u64));
                let logits = model.forward_batch(&mut tape, &refs)?;
                let mut terms = Vec::with_capacity(logits.len());
                let mut weight_sum = 0.0;
                for (z, ex) in logits.iter().zip(&examples) {
                    let w = weights[ex.label];
                    weight_sum += w;
                    terms.push(tape.class_loss(*z, ex.label, w, gamma));
                }
                let joined = tape.concat_rows(&terms);
                let total = tape.sum_all(joined);
                let loss = tape.scale(total, 1.0 / weight_sum);
                let value = tape.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { step });
                }
                let grads = tape.backward_params(loss);
                (value, grads, tape.take_buffer_updates())
            };
            store.zero_grad();
            store.accumulate(&grads);
            clip_store_grads(store, cfg.clip_norm);
            opt.step(store, lr, cfg)?;
            for (id, value) in buffers {
                *store.value_mut(id) = value;
            }
            loss_sum += loss;
            step += 1;
        }

        let m = evaluate_model(model, store, val_set)?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n_batches as f64,
            val_macro_f1: m.macro_f1,
            val_micro_f1: m.micro_f1,
            val_precision: m.macro_precision,
            val_recall: m.macro_recall,
            lr,
        };
        on_epoch(&row);
        if best.as_ref().is_none_or(|(f, _, _)| m.macro_f1 > *f) {
            best = Some((m.macro_f1, epoch + 1, store.clone()));
        }
        log.push(row);
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_params,
        total_steps,
    })
}

/// Serializes the log as JSON lines.
pub fn metrics_jsonl(log: &[EpochMetrics]) -> String {
    let mut out = String::new();
    for row in log {
        out.push_str(&serde_json::to_string(row).expect("serializable metrics"));
        out.push('\n');
    }
    out
}
