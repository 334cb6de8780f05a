//! Sequence augmentation: independent per-dimension temporal permutation.
//!
//! With probability `apply_prob`, a fraction `ρ ~ Beta(a, b)` of the feature
//! dimensions is chosen and each chosen column is shuffled along time with
//! its own permutation. Column multisets are therefore always preserved.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::Example;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub apply_prob: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            apply_prob: 0.5,
            beta_a: 0.5,
            beta_b: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::config(format!(
                "apply_prob must be in [0, 1], got {}",
                self.apply_prob
            )));
        }
        if !(self.beta_a > 0.0 && self.beta_b > 0.0 && self.beta_a.is_finite() && self.beta_b.is_finite()) {
            return Err(Error::config(format!(
                "beta parameters must be positive, got ({}, {})",
                self.beta_a, self.beta_b
            )));
        }
        Ok(())
    }
}

/// Which dimensions a single call permuted; empty when the coin missed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugmentTrace {
    pub applied: bool,
    pub dims: Vec<usize>,
}

/// Augments one sequence and reports what was touched.
pub fn seqaug_traced<R: Rng + ?Sized>(x: &Matrix, cfg: &AugmentConfig, rng: &mut R) -> (Matrix, AugmentTrace) {
    let mut out = x.clone();
    if cfg.apply_prob <= 0.0 || rng.random::<f64>() >= cfg.apply_prob {
        return (out, AugmentTrace::default());
    }
    let d = x.cols();
    let rho = Beta::new(cfg.beta_a, cfg.beta_b)
        .expect("validated beta parameters")
        .sample(rng);
    let k = ((rho * d as f64).ceil() as usize).min(d);
    let mut dims = index::sample(rng, d, k).into_vec();
    dims.sort_unstable();
    let t = x.rows();
    let mut column = vec![0.0; t];
    for &c in &dims {
        for (r, v) in column.iter_mut().enumerate() {
            *v = x.get(r, c);
        }
        column.shuffle(rng);
        for (r, v) in column.iter().enumerate() {
            out.set(r, c, *v);
        }
    }
    (out, AugmentTrace { applied: true, dims })
}

pub fn seqaug<R: Rng + ?Sized>(x: &Matrix, cfg: &AugmentConfig, rng: &mut R) -> Matrix {
    seqaug_traced(x, cfg, rng).0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Speech,
    Text,
}

/// RNG stream for one (seed, epoch, utterance, modality). Independent of the
/// order in which examples are visited or the number of workers.
pub fn stream_rng(seed: u64, epoch: u64, id: &str, modality: Modality) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(epoch.to_le_bytes());
    h.update([modality as u8]);
    h.update(id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Augments speech and text with independent coin flips and streams; F0 and
/// mel are left untouched.
pub fn augment_example(ex: &Example, cfg: &AugmentConfig, epoch: u64) -> Example {
    let mut rs = stream_rng(cfg.seed, epoch, &ex.id, Modality::Speech);
    let mut rt = stream_rng(cfg.seed, epoch, &ex.id, Modality::Text);
    Example {
        speech: seqaug(&ex.speech, cfg, &mut rs),
        text: seqaug(&ex.text, cfg, &mut rt),
        ..ex.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featpipe::F0Track;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect())
    }

    fn sorted_column(m: &Matrix, c: usize) -> Vec<f64> {
        let mut v = m.column(c);
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn disabled_is_identity() {
        let cfg = AugmentConfig { apply_prob: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(6, 4, &mut rng);
        for _ in 0..50 {
            assert_eq!(seqaug(&x, &cfg, &mut rng), x);
        }
    }

    #[test]
    fn single_frame_is_identity() {
        let cfg = AugmentConfig { apply_prob: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(1, 16, &mut rng);
        for _ in 0..50 {
            let (y, trace) = seqaug_traced(&x, &cfg, &mut rng);
            assert!(trace.applied);
            assert_eq!(y, x);
        }
    }

    #[test]
    fn untouched_dimensions_are_unchanged() {
        let cfg = AugmentConfig { apply_prob: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(9, 12, &mut rng);
        for _ in 0..100 {
            let (y, trace) = seqaug_traced(&x, &cfg, &mut rng);
            for c in (0..12).filter(|c| !trace.dims.contains(c)) {
                assert_eq!(y.column(c), x.column(c));
            }
            assert!(!trace.dims.is_empty());
        }
    }

    #[test]
    fn dimensions_are_permuted_independently() {
        // With one shared permutation, columns 0 and 1 of an arange input
        // would always move together.
        let cfg = AugmentConfig { apply_prob: 1.0, beta_a: 50.0, beta_b: 0.01, seed: 0 };
        let x = Matrix::from_vec(8, 2, (0..8).flat_map(|t| [t as f64, t as f64]).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let differ = (0..20).any(|_| {
            let y = seqaug(&x, &cfg, &mut rng);
            y.column(0) != y.column(1)
        });
        assert!(differ);
    }

    #[test]
    fn bad_configs_rejected() {
        for cfg in [
            AugmentConfig { apply_prob: 1.5, ..Default::default() },
            AugmentConfig { beta_a: 0.0, ..Default::default() },
            AugmentConfig { beta_b: -1.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    fn example(rng: &mut ChaCha8Rng) -> Example {
        Example {
            id: "utt-1".into(),
            label: 0,
            speech: random(7, 64, rng),
            text: random(5, 64, rng),
            f0: F0Track::new(vec![100.0; 7]).unwrap(),
            mel: random(7, 4, rng),
            spectral: None,
        }
    }

    #[test]
    fn streams_are_independent_per_modality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ex = example(&mut rng);
        let cfg = AugmentConfig::default();
        let mut saw_speech_only = false;
        for epoch in 0..64 {
            let y = augment_example(&ex, &cfg, epoch);
            assert_eq!(y.f0, ex.f0);
            assert_eq!(y.mel, ex.mel);
            if y.speech != ex.speech && y.text == ex.text {
                saw_speech_only = true;
            }
            assert_eq!(augment_example(&ex, &cfg, epoch), y);
        }
        assert!(saw_speech_only);
    }

    #[test]
    fn different_seeds_choose_different_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(6, 64, &mut rng);
        let cfg = AugmentConfig { apply_prob: 1.0, ..Default::default() };
        let (_, a) = seqaug_traced(&x, &cfg, &mut stream_rng(1, 0, "u", Modality::Speech));
        let (_, b) = seqaug_traced(&x, &cfg, &mut stream_rng(2, 0, "u", Modality::Speech));
        assert_ne!(a.dims, b.dims);
    }

    proptest! {
        #[test]
        fn column_multisets_and_moments_preserved(
            rows in 1usize..10,
            cols in 1usize..10,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(rows, cols, &mut rng);
            let cfg = AugmentConfig { apply_prob: 1.0, ..Default::default() };
            let y = seqaug(&x, &cfg, &mut rng);
            for c in 0..cols {
                prop_assert_eq!(sorted_column(&x, c), sorted_column(&y, c));
            }
            let (mx, my) = (x.col_means(), y.col_means());
            for c in 0..cols {
                prop_assert!((mx.get(0, c) - my.get(0, c)).abs() < 1e-12);
            }
        }
    }
}
