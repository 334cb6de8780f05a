//! JSON-lines manifests, the label vocabulary, and dataset loading.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::feature::decode_feature;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::featpipe::F0Track;

/// One manifest line. Paths are resolved relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub label: String,
    pub speech_path: String,
    pub text_path: String,
    pub f0_path: String,
    pub mel_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_path: Option<String>,
}

pub const DEFAULT_LABELS: [&str; 8] = [
    "angry", "contempt", "disgust", "fear", "happy", "neutral", "sad", "surprise",
];

fn default_drop() -> Vec<String> {
    vec!["X".to_string(), "O".to_string()]
}

/// Ordered class labels plus labels whose records are skipped at load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelVocabulary {
    pub labels: Vec<String>,
    #[serde(default = "default_drop")]
    pub drop: Vec<String>,
}

/// What to do with a record's label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelClass {
    Keep(usize),
    Drop,
    Unknown,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self {
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            drop: default_drop(),
        }
    }
}

impl LabelVocabulary {
    pub fn new(labels: Vec<String>, drop: Vec<String>) -> Result<Self> {
        let v = Self { labels, drop };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() < 2 {
            return Err(Error::config("label vocabulary needs at least 2 labels"));
        }
        let mut seen = HashSet::new();
        for l in &self.labels {
            if !seen.insert(l) {
                return Err(Error::config(format!("duplicate label {l:?} in vocabulary")));
            }
        }
        if let Some(d) = self.drop.iter().find(|d| seen.contains(d)) {
            return Err(Error::config(format!(
                "label {d:?} is both in the vocabulary and the drop list"
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Self = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        v.validate()?;
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        super::feature::write_atomic(path, text.as_bytes())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn classify(&self, label: &str) -> LabelClass {
        if let Some(i) = self.labels.iter().position(|l| l == label) {
            LabelClass::Keep(i)
        } else if self.drop.iter().any(|d| d == label) {
            LabelClass::Drop
        } else {
            LabelClass::Unknown
        }
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// One utterance with all of its modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub speech: Matrix,
    pub text: Matrix,
    pub f0: F0Track,
    pub mel: Matrix,
    pub spectral: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub dropped: usize,
    /// SHA-256 over the manifest and every feature file it references.
    pub digest: String,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    /// Checks every example against the declared feature widths.
    pub fn check_dims(&self, speech_dim: usize, text_dim: usize, mel_bands: Option<usize>) -> Result<()> {
        for e in &self.examples {
            if e.speech.cols() != speech_dim {
                return Err(Error::ingestion(
                    &e.id,
                    format!("speech features have {} dims, expected {speech_dim}", e.speech.cols()),
                ));
            }
            if e.text.cols() != text_dim {
                return Err(Error::ingestion(
                    &e.id,
                    format!("text features have {} dims, expected {text_dim}", e.text.cols()),
                ));
            }
            if let Some(b) = mel_bands {
                if e.mel.cols() != b {
                    return Err(Error::ingestion(
                        &e.id,
                        format!("mel filterbank has {} bands, expected {b}", e.mel.cols()),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::ingestion(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    super::feature::write_atomic(path.as_ref(), out.as_bytes())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reference labels of a manifest (dropped labels removed), without reading
/// any feature file.
pub fn reference_labels(
    path: impl AsRef<Path>,
    vocab: &LabelVocabulary,
) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in read_manifest(path)? {
        if !seen.insert(r.id.clone()) {
            return Err(Error::ingestion(path, format!("duplicate id {:?}", r.id)));
        }
        match vocab.classify(&r.label) {
            LabelClass::Keep(l) => out.push((r.id, l)),
            LabelClass::Drop => {}
            LabelClass::Unknown => {
                return Err(Error::ingestion(
                    path,
                    format!("record {:?} has unknown label {:?}", r.id, r.label),
                ))
            }
        }
    }
    Ok(out)
}

/// Loads every kept record of a manifest. Records whose label is in the drop
/// list are skipped and counted.
pub fn load_dataset(manifest: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let bytes = fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));

    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    let mut dropped = 0;
    for r in records {
        if !seen.insert(r.id.clone()) {
            return Err(Error::ingestion(manifest, format!("duplicate id {:?}", r.id)));
        }
        match vocab.classify(&r.label) {
            LabelClass::Keep(label) => kept.push((r, label)),
            LabelClass::Drop => dropped += 1,
            LabelClass::Unknown => {
                return Err(Error::ingestion(
                    manifest,
                    format!("record {:?} has unknown label {:?}", r.id, r.label),
                ))
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::ingestion(manifest, "no examples"));
    }

    let loaded: Vec<(Example, Vec<u8>)> = kept
        .par_iter()
        .map(|(r, label)| load_example(base, r, *label))
        .collect::<Result<_>>()?;

    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let mut examples = Vec::with_capacity(loaded.len());
    for (ex, file_digest) in loaded {
        hasher.update(&file_digest);
        examples.push(ex);
    }
    Ok(Dataset {
        examples,
        dropped,
        digest: hex::encode(hasher.finalize()),
    })
}

fn load_example(base: &Path, r: &ManifestRecord, label: usize) -> Result<(Example, Vec<u8>)> {
    let mut hasher = Sha256::new();
    let mut read = |p: &str| -> Result<Matrix> {
        let path = resolve(base, p);
        let bytes = fs::read(&path).map_err(|e| Error::ingestion(&path, format!("cannot read: {e}")))?;
        hasher.update(&bytes);
        decode_feature(&bytes).map_err(|msg| Error::ingestion(&path, msg))
    };
    let speech = read(&r.speech_path)?;
    let text = read(&r.text_path)?;
    let f0 = read(&r.f0_path)?;
    let mel = read(&r.mel_path)?;
    let spectral = r.spectral_path.as_deref().map(&mut read).transpose()?;

    if f0.cols() != 1 {
        return Err(Error::ingestion(
            resolve(base, &r.f0_path),
            format!("F0 file must have 1 column, found {}", f0.cols()),
        ));
    }
    for (what, m, p) in [
        ("speech", &speech, &r.speech_path),
        ("text", &text, &r.text_path),
        ("F0", &f0, &r.f0_path),
        ("mel", &mel, &r.mel_path),
    ] {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::ingestion(resolve(base, p), format!("{what} features are empty")));
        }
    }
    let f0 = F0Track::new(f0.into_vec())
        .map_err(|e| Error::ingestion(resolve(base, &r.f0_path), e.to_string()))?;
    let spectral = spectral.map(Matrix::into_vec);
    Ok((
        Example {
            id: r.id.clone(),
            label,
            speech,
            text,
            f0,
            mel,
            spectral,
        },
        hasher.finalize().to_vec(),
    ))
}

/// Stable digest of a manifest's kept utterance ids (sorted), shared with the
/// prediction files scored against it.
pub fn split_digest<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
