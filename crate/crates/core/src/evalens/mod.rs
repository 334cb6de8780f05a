//! Classification metrics, majority-vote ensembles, class-balanced subsets,
//! and exhaustive ensemble search.

mod ensemble;
mod metrics;
mod predictions;

use std::collections::BTreeMap;

pub use ensemble::{
    balanced_subsets, ensemble_search, majority_vote, rank, subset_score, EnsembleSpec, ScoreRow,
    SearchResult, DEFAULT_SUBSETS, MIN_ENSEMBLE,
};
pub use metrics::{
    confusion_counts, macro_f1, macro_precision, macro_recall, metrics, micro_f1, ClassCounts,
    Metrics,
};
pub use predictions::PredictionSet;

use crate::dataio::split_digest;
use crate::error::{Error, Result};

/// Scores a prediction set against reference labels covering the same split.
pub fn evaluate(set: &PredictionSet, refs: &BTreeMap<String, usize>, num_classes: usize) -> Result<Metrics> {
    let digest = split_digest(refs.keys().map(String::as_str));
    if set.split_digest != digest {
        return Err(Error::config(format!(
            "prediction set {:?} does not cover the reference split ({} predictions, {} references)",
            set.model_name,
            set.len(),
            refs.len()
        )));
    }
    let ids: Vec<&str> = refs.keys().map(String::as_str).collect();
    let preds = set.aligned(&ids)?;
    let truth: Vec<usize> = refs.values().copied().collect();
    metrics(&truth, &preds, num_classes)
}
