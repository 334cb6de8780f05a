//! Losses, optimizer, schedule, samplers, checkpoints, and the training loop.

mod checkpoint;
mod config;
mod loss;
mod optim;
mod run;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{
    encode_checkpoint, load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader,
    ParamEntry, CHECKPOINT_MAGIC,
};
pub use config::{LossKind, SamplerKind, TrainConfig};
pub use loss::{batch_weighted_mean, compute_class_weights, focal_loss, weighted_ce};
pub use optim::{clip_grad_norm, clip_store_grads, AdamW};
pub use run::{
    load_trained, predict_split, run_training, Prepared, RunConfig, RunDigests, RunManifest,
    RunSummary, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE, TOOL_VERSION,
};
pub use sampler::{balanced_batches, shuffle_batches, BalancedSampler};
pub use schedule::{cosine_warmup_lr, decay_value, warmup_value};
pub use train::{evaluate_model, metrics_jsonl, train, EpochMetrics, TrainOutcome};
