use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    WeightedCe,
    Focal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SamplerKind {
    Shuffle,
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub sampler: SamplerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 20,
            warmup_steps: 500,
            lr_max: 5e-5,
            lr_min: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            weight_decay: 1e-6,
            clip_norm: 10.0,
            loss: LossKind::WeightedCe,
            focal_gamma: 2.0,
            sampler: SamplerKind::Shuffle,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be ≥ 1".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_max.is_finite() && self.lr_min <= self.lr_max) {
            return fail(format!(
                "learning rates must satisfy 0 ≤ lr_min ≤ lr_max, got lr_min={} lr_max={}",
                self.lr_min, self.lr_max
            ));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be > 0, got {}", self.clip_norm));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return fail(format!("focal_gamma must be ≥ 0, got {}", self.focal_gamma));
        }
        Ok(())
    }

    /// Focusing exponent actually applied by the loss.
    pub fn gamma(&self) -> f64 {
        match self.loss {
            LossKind::WeightedCe => 0.0,
            LossKind::Focal => self.focal_gamma,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_serialize_with_upper_case_enums() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"WEIGHTED_CE\""));
        assert!(json.contains("\"SHUFFLE\""));
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn swapped_rates_rejected() {
        let cfg = TrainConfig { lr_min: 5e-5, lr_max: 1e-5, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
