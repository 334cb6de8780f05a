//! File-level orchestration: run configs, the run manifest, training into an
//! output directory, and prediction from a checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint};
use super::config::TrainConfig;
use super::train::{metrics_jsonl, train, EpochMetrics, TrainOutcome};
use crate::augment::AugmentConfig;
use crate::dataio::{load_dataset, write_atomic, Dataset, LabelVocabulary, SynthConfig, SynthCorpus};
use crate::error::{Error, Result};
use crate::evalens::PredictionSet;
use crate::featpipe::SpectralMode;
use crate::fusion::{FusionModel, HeadConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Everything needed to train one head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    /// Label vocabulary file; the built-in eight-class vocabulary if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDigests {
    pub train: String,
    pub val: String,
    pub vocab: String,
}

/// Config snapshot with absolute paths plus data digests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config: RunConfig,
    pub digests: RunDigests,
    pub tool_version: String,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable manifest");
        s.push('\n');
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        parse_json(path.as_ref())
    }
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        Error::config(format!("{}: at `{at}`: {}", path.display(), e.inner()))
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

impl RunConfig {
    /// Loads a run config, or the config embedded in a run manifest.
    /// Relative paths are taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg = if value.get("config").is_some() && value.get("digests").is_some() {
            parse_json::<RunManifest>(path)?.config
        } else {
            parse_json::<RunConfig>(path)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.train_manifest = resolve(base, &cfg.train_manifest);
        cfg.val_manifest = resolve(base, &cfg.val_manifest);
        cfg.vocab = cfg.vocab.map(|v| resolve(base, &v));
        Ok(cfg)
    }

    /// Default run over a synthetic corpus with head dimensions matching it.
    pub fn for_corpus(corpus: &SynthCorpus, synth: &SynthConfig) -> Self {
        let mut head = HeadConfig {
            num_classes: synth.num_classes,
            speech_dim: synth.speech_dim,
            text_dim: synth.text_dim,
            ..Default::default()
        };
        head.spectral.bands = synth.mel_bands;
        Self {
            train_manifest: corpus.train_manifest.clone(),
            val_manifest: corpus.val_manifest.clone(),
            vocab: Some(corpus.vocab_path.clone()),
            head,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.train.validate()?;
        self.augment.validate()
    }

    pub fn load_vocab(&self) -> Result<LabelVocabulary> {
        match &self.vocab {
            Some(p) => LabelVocabulary::load(p),
            None => Ok(LabelVocabulary::default()),
        }
    }

    fn mel_bands(&self) -> Option<usize> {
        (self.head.use_spectral && self.head.spectral.mode == SpectralMode::Local)
            .then_some(self.head.spectral.bands)
    }

    /// Loads data, checks it against the head config, and builds the
    /// manifest with absolute paths.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let vocab = self.load_vocab()?;
        if vocab.num_classes() != self.head.num_classes {
            return Err(Error::config(format!(
                "head.num_classes is {} but the vocabulary has {} labels",
                self.head.num_classes,
                vocab.num_classes()
            )));
        }
        let train = load_dataset(&self.train_manifest, &vocab)?;
        let val = load_dataset(&self.val_manifest, &vocab)?;
        for ds in [&train, &val] {
            ds.check_dims(self.head.speech_dim, self.head.text_dim, self.mel_bands())?;
        }
        let mut config = self.clone();
        config.train_manifest = absolute(&self.train_manifest)?;
        config.val_manifest = absolute(&self.val_manifest)?;
        config.vocab = self.vocab.as_deref().map(absolute).transpose()?;
        let manifest = RunManifest {
            config,
            digests: RunDigests {
                train: train.digest.clone(),
                val: val.digest.clone(),
                vocab: vocab.digest(),
            },
            tool_version: TOOL_VERSION.to_string(),
        };
        Ok(Prepared {
            manifest,
            vocab,
            train,
            val,
        })
    }
}

pub struct Prepared {
    pub manifest: RunManifest,
    pub vocab: LabelVocabulary,
    pub train: Dataset,
    pub val: Dataset,
}

pub struct RunSummary {
    pub manifest: RunManifest,
    pub manifest_hash: String,
    pub outcome: TrainOutcome,
    pub out_dir: PathBuf,
}

/// Trains and writes `run_manifest.json`, `metrics.jsonl`, and the
/// best-epoch `checkpoint.bin` under `out_dir`.
pub fn run_training(
    cfg: &RunConfig,
    out_dir: impl AsRef<Path>,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunSummary> {
    let out_dir = out_dir.as_ref().to_path_buf();
    let prepared = cfg.prepare()?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let manifest = prepared.manifest;
    let manifest_hash = manifest.hash();
    write_atomic(&out_dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;

    let c = &manifest.config;
    let (model, mut store) = FusionModel::build(&c.head, c.train.seed)?;
    let outcome = train(
        &model,
        &mut store,
        &prepared.train.examples,
        &prepared.val.examples,
        &c.train,
        &c.augment,
        on_epoch,
    )?;
    write_atomic(&out_dir.join(METRICS_FILE), metrics_jsonl(&outcome.log).as_bytes())?;
    save_checkpoint(
        out_dir.join(CHECKPOINT_FILE),
        &outcome.best_params,
        &manifest_hash,
        outcome.best_epoch,
    )?;
    Ok(RunSummary {
        manifest,
        manifest_hash,
        outcome,
        out_dir,
    })
}

/// Restores the model described by a run manifest from a checkpoint whose
/// recorded manifest hash must match.
pub fn load_trained(manifest: &RunManifest, checkpoint: impl AsRef<Path>) -> Result<(FusionModel, crate::diffcore::ParamStore)> {
    let checkpoint = checkpoint.as_ref();
    let header = read_checkpoint_header(checkpoint)?;
    let hash = manifest.hash();
    if header.manifest_hash != hash {
        return Err(Error::config(format!(
            "checkpoint {} was produced by a different run manifest (hash {} vs {})",
            checkpoint.display(),
            header.manifest_hash,
            hash
        )));
    }
    let c = &manifest.config;
    let (model, mut store) = FusionModel::build(&c.head, c.train.seed)?;
    load_checkpoint(checkpoint, &mut store)?;
    Ok((model, store))
}

/// Predicts every kept utterance of `split_manifest`.
pub fn predict_split(
    manifest: &RunManifest,
    checkpoint: impl AsRef<Path>,
    split_manifest: impl AsRef<Path>,
    model_name: &str,
) -> Result<PredictionSet> {
    let (model, store) = load_trained(manifest, checkpoint)?;
    let vocab = manifest.config.load_vocab()?;
    let ds = load_dataset(split_manifest, &vocab)?;
    ds.check_dims(manifest.config.head.speech_dim, manifest.config.head.text_dim, manifest.config.mel_bands())?;
    let preds = model.predict(&store, &ds.examples)?;
    let map = ds
        .examples
        .iter()
        .zip(preds)
        .map(|(e, p)| (e.id.clone(), p))
        .collect();
    Ok(PredictionSet::new(model_name, map))
}
