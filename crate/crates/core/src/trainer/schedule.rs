use std::f64::consts::PI;

use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Linear ramp `0 → lr_max` over `[0, warmup]`.
pub fn warmup_value(step: usize, warmup: usize, lr_max: f64) -> f64 {
    if warmup == 0 {
        return lr_max;
    }
    lr_max * step as f64 / warmup as f64
}

/// Cosine decay `lr_max → lr_min` over `[warmup, total]`.
pub fn decay_value(step: usize, warmup: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos())
}

pub fn cosine_warmup_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    let warmup = cfg.warmup_steps;
    if total_steps <= warmup {
        return Err(Error::config(format!(
            "total_steps ({total_steps}) must exceed warmup_steps ({warmup})"
        )));
    }
    if step > total_steps {
        return Err(Error::config(format!("step {step} is past total_steps {total_steps}")));
    }
    Ok(if step <= warmup {
        warmup_value(step, warmup, cfg.lr_max)
    } else {
        decay_value(step, warmup, total_steps, cfg.lr_max, cfg.lr_min)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        let cfg = TrainConfig::default();
        let total = 1600;
        assert_eq!(cosine_warmup_lr(500, total, &cfg).unwrap(), 5e-5);
        assert_eq!(cosine_warmup_lr(total, total, &cfg).unwrap(), 1e-5);
        assert!((cosine_warmup_lr(250, total, &cfg).unwrap() - 2.5e-5).abs() < 1e-18);
        assert_eq!(cosine_warmup_lr(0, total, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn continuous_at_warmup_and_monotone_after() {
        let cfg = TrainConfig::default();
        let total = 1600;
        let a = warmup_value(500, 500, cfg.lr_max);
        let b = decay_value(500, 500, total, cfg.lr_max, cfg.lr_min);
        assert!((a - b).abs() <= 1e-12);
        let lrs: Vec<f64> = (0..=total).map(|s| cosine_warmup_lr(s, total, &cfg).unwrap()).collect();
        for w in lrs[500..].windows(2) {
            assert!(w[1] <= w[0]);
        }
        let max = lrs.iter().cloned().fold(f64::MIN, f64::max);
        let min_after = lrs[500..].iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(max, cfg.lr_max);
        assert_eq!(min_after, cfg.lr_min);
    }

    #[test]
    fn too_short_runs_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(cosine_warmup_lr(0, 500, &cfg), Err(Error::Config(_))));
    }
}
