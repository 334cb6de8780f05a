use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{split_digest, LabelClass, LabelVocabulary};
use crate::error::{Error, Result};

/// One model's labels over an evaluation split, keyed by utterance id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionSet {
    pub model_name: String,
    pub predictions: BTreeMap<String, usize>,
    pub split_digest: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    label: String,
}

impl PredictionSet {
    pub fn new(model_name: impl Into<String>, predictions: BTreeMap<String, usize>) -> Self {
        let split_digest = split_digest(predictions.keys().map(String::as_str));
        Self {
            model_name: model_name.into(),
            predictions,
            split_digest,
        }
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Predictions aligned with `ids`; every id must be present.
    pub fn aligned(&self, ids: &[&str]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.predictions.get(*id).copied().ok_or_else(|| {
                    Error::data(format!("model {:?} has no prediction for {id:?}", self.model_name))
                })
            })
            .collect()
    }

    /// Reads a JSON-lines prediction file. The model name defaults to the
    /// file stem.
    pub fn read(path: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut predictions = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(line)
                .map_err(|e| Error::ingestion(path, format!("line {}: {e}", n + 1)))?;
            let label = match vocab.classify(&l.label) {
                LabelClass::Keep(i) => i,
                _ => {
                    return Err(Error::ingestion(
                        path,
                        format!("line {}: label {:?} is not in the vocabulary", n + 1, l.label),
                    ))
                }
            };
            if predictions.insert(l.id.clone(), label).is_some() {
                return Err(Error::ingestion(path, format!("line {}: duplicate id {:?}", n + 1, l.id)));
            }
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::new(name, predictions))
    }

    pub fn write(&self, path: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<()> {
        let mut out = String::new();
        for (id, &label) in &self.predictions {
            let name = vocab
                .name(label)
                .ok_or_else(|| Error::data(format!("label id {label} is outside the vocabulary")))?;
            let line = Line {
                id: id.clone(),
                label: name.to_string(),
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        crate::dataio::write_atomic(path.as_ref(), out.as_bytes())
    }
}
