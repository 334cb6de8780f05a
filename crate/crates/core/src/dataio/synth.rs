//! Deterministic synthetic corpus with a known, learnable class structure.
//!
//! Each class gets orthogonal mean vectors for speech, text, and mel features,
//! scaled so that class means are `separation` noise standard deviations
//! apart. Frames are the class mean plus unit Gaussian noise. F0 tracks sit at
//! `120 + 40·class` Hz with Gaussian jitter and 20% unvoiced frames.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::feature::write_feature;
use super::manifest::{write_manifest, LabelVocabulary, ManifestRecord, DEFAULT_LABELS};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const F0_BASE_HZ: f64 = 120.0;
pub const F0_STEP_HZ: f64 = 40.0;
pub const F0_JITTER_HZ: f64 = 5.0;
pub const UNVOICED_RATE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub speech_dim: usize,
    pub text_dim: usize,
    pub mel_bands: usize,
    pub spectral_dim: usize,
    /// Distance between class means in units of the per-frame noise std.
    pub separation: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub val_fraction: f64,
    /// Share speech/text/mel/spectral means across classes so that only the
    /// F0 track carries the label.
    pub f0_only: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 200,
            speech_dim: 64,
            text_dim: 48,
            mel_bands: 16,
            spectral_dim: 32,
            separation: 4.0,
            min_frames: 4,
            max_frames: 12,
            val_fraction: 0.2,
            f0_only: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be ≥ 2"));
        }
        if self.per_class == 0 {
            return Err(Error::config("per_class must be ≥ 1"));
        }
        let min_dim = self
            .speech_dim
            .min(self.text_dim)
            .min(self.mel_bands)
            .min(self.spectral_dim);
        if min_dim < self.num_classes {
            return Err(Error::config(format!(
                "every feature dim must be ≥ num_classes ({}) to hold orthogonal class means",
                self.num_classes
            )));
        }
        if self.min_frames < 3 || self.min_frames > self.max_frames {
            return Err(Error::config("frame range must satisfy 3 ≤ min_frames ≤ max_frames"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must be in [0, 1)"));
        }
        if !(self.separation >= 0.0) {
            return Err(Error::config("separation must be ≥ 0"));
        }
        Ok(())
    }
}

/// Paths of a generated corpus.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub dir: PathBuf,
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub vocab_path: PathBuf,
    pub vocab: LabelVocabulary,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `k` mutually orthogonal vectors of norm `scale` in `dim` dimensions.
fn orthogonal_means(k: usize, dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * scale).collect())
        .collect()
}

fn class_names(k: usize) -> Vec<String> {
    if k <= DEFAULT_LABELS.len() {
        DEFAULT_LABELS[..k].iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|c| format!("class{c}")).collect()
    }
}

fn noisy_frames(mean: &[f64], frames: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let dim = mean.len();
    let mut m = Matrix::zeros(frames, dim);
    for t in 0..frames {
        for (d, mu) in mean.iter().enumerate() {
            m.set(t, d, mu + normal(rng));
        }
    }
    m
}

/// Writes `train.jsonl`, `val.jsonl`, `vocab.json`, and `features/` under
/// `out_dir`. A pure function of `cfg`.
pub fn gen_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    cfg.validate()?;
    let dir = out_dir.as_ref().to_path_buf();
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = cfg.separation / std::f64::consts::SQRT_2;
    let k = cfg.num_classes;
    let mut speech_means = orthogonal_means(k, cfg.speech_dim, scale, &mut rng);
    let mut text_means = orthogonal_means(k, cfg.text_dim, scale, &mut rng);
    let mut mel_means = orthogonal_means(k, cfg.mel_bands, scale, &mut rng);
    let mut spec_means = orthogonal_means(k, cfg.spectral_dim, scale, &mut rng);
    if cfg.f0_only {
        for means in [&mut speech_means, &mut text_means, &mut mel_means, &mut spec_means] {
            let shared = means[0].clone();
            means.iter_mut().for_each(|m| *m = shared.clone());
        }
    }

    let names = class_names(k);
    let n_val = (cfg.per_class as f64 * cfg.val_fraction).round() as usize;
    let n_train = cfg.per_class - n_val;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..k {
        let base_hz = F0_BASE_HZ + F0_STEP_HZ * c as f64;
        for i in 0..cfg.per_class {
            let id = format!("syn-{c}-{i:05}");
            let frames = rng.random_range(cfg.min_frames..=cfg.max_frames);
            let speech = noisy_frames(&speech_means[c], frames, &mut rng);
            let text = noisy_frames(&text_means[c], frames, &mut rng);
            let mel = noisy_frames(&mel_means[c], frames, &mut rng);
            let spec = noisy_frames(&spec_means[c], 1, &mut rng);
            let f0: Vec<f64> = (0..frames)
                .map(|_| {
                    let unvoiced = rng.random::<f64>() < UNVOICED_RATE;
                    let hz = base_hz + F0_JITTER_HZ * normal(&mut rng);
                    if unvoiced {
                        0.0
                    } else {
                        hz.max(1.0)
                    }
                })
                .collect();
            let f0 = Matrix::from_vec(frames, 1, f0);

            let rel = |kind: &str| format!("features/{id}.{kind}.ft");
            write_feature(&speech, dir.join(rel("speech")))?;
            write_feature(&text, dir.join(rel("text")))?;
            write_feature(&f0, dir.join(rel("f0")))?;
            write_feature(&mel, dir.join(rel("mel")))?;
            write_feature(&spec, dir.join(rel("spec")))?;
            let rec = ManifestRecord {
                id: id.clone(),
                label: names[c].clone(),
                speech_path: rel("speech"),
                text_path: rel("text"),
                f0_path: rel("f0"),
                mel_path: rel("mel"),
                spectral_path: Some(rel("spec")),
            };
            if i < n_train {
                train.push(rec);
            } else {
                val.push(rec);
            }
        }
    }

    let vocab = LabelVocabulary::new(names, vec!["X".into(), "O".into()])?;
    let corpus = SynthCorpus {
        train_manifest: dir.join("train.jsonl"),
        val_manifest: dir.join("val.jsonl"),
        vocab_path: dir.join("vocab.json"),
        dir,
        vocab,
    };
    write_manifest(&corpus.train_manifest, &train)?;
    write_manifest(&corpus.val_manifest, &val)?;
    corpus.vocab.save(&corpus.vocab_path)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_are_equidistant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let means = orthogonal_means(4, 10, 4.0 / std::f64::consts::SQRT_2, &mut rng);
        for a in 0..4 {
            for b in (a + 1)..4 {
                let d: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - 4.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SynthConfig { per_class: 0, ..Default::default() },
            SynthConfig { num_classes: 1, ..Default::default() },
            SynthConfig { min_frames: 2, ..Default::default() },
            SynthConfig { num_classes: 20, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
