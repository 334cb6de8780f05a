use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::macro_f1;
use super::predictions::PredictionSet;
use crate::error::{Error, Result};

pub const MIN_ENSEMBLE: usize = 3;
pub const DEFAULT_SUBSETS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    /// Sorted, unique member names.
    pub members: Vec<String>,
    pub tiebreaker: String,
}

impl EnsembleSpec {
    pub fn new<S: Into<String>>(members: impl IntoIterator<Item = S>, tiebreaker: impl Into<String>) -> Result<Self> {
        let members: BTreeSet<String> = members.into_iter().map(Into::into).collect();
        let spec = Self {
            members: members.into_iter().collect(),
            tiebreaker: tiebreaker.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < MIN_ENSEMBLE {
            return Err(Error::config(format!(
                "an ensemble needs at least {MIN_ENSEMBLE} members, got {}",
                self.members.len()
            )));
        }
        if !self.members.contains(&self.tiebreaker) {
            return Err(Error::config(format!(
                "tiebreaker {:?} is not an ensemble member",
                self.tiebreaker
            )));
        }
        Ok(())
    }
}

/// Plurality vote per utterance. Any non-unique top count defers to the
/// tiebreaker's own prediction.
pub fn majority_vote(sets: &[PredictionSet], spec: &EnsembleSpec) -> Result<PredictionSet> {
    spec.validate()?;
    let by_name: BTreeMap<&str, &PredictionSet> = sets.iter().map(|s| (s.model_name.as_str(), s)).collect();
    let members: Vec<&PredictionSet> = spec
        .members
        .iter()
        .map(|m| {
            by_name
                .get(m.as_str())
                .copied()
                .ok_or_else(|| Error::config(format!("ensemble member {m:?} has no prediction set")))
        })
        .collect::<Result<_>>()?;
    let tiebreaker = by_name[spec.tiebreaker.as_str()];
    let digest = &tiebreaker.split_digest;
    if let Some(bad) = members.iter().find(|s| &s.split_digest != digest) {
        return Err(Error::data(format!(
            "prediction sets {:?} and {:?} cover different splits",
            bad.model_name, tiebreaker.model_name
        )));
    }
    let mut out = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (id, &fallback) in &tiebreaker.predictions {
        counts.clear();
        for m in &members {
            let label = m.predictions[id];
            *counts.entry(label).or_default() += 1;
        }
        let top = counts.values().copied().max().unwrap_or(0);
        let mut winners = counts.iter().filter(|(_, &c)| c == top).map(|(&l, _)| l);
        let first = winners.next();
        let label = match (first, winners.next()) {
            (Some(l), None) => l,
            _ => fallback,
        };
        out.insert(id.clone(), label);
    }
    Ok(PredictionSet {
        model_name: format!("ensemble[{}]", spec.members.join("+")),
        predictions: out,
        split_digest: digest.clone(),
    })
}

/// `count` independent class-balanced samples. Each holds exactly `n_min`
/// utterances of every class, drawn without replacement, where `n_min` is the
/// smallest class count.
pub fn balanced_subsets(
    refs: &BTreeMap<String, usize>,
    num_classes: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); num_classes];
    for (id, &label) in refs {
        let slot = by_class
            .get_mut(label)
            .ok_or_else(|| Error::data(format!("reference label {label} for {id:?} is out of range")))?;
        slot.push(id);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::config(format!("class {c} has no reference utterances")));
    }
    let n_min = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut subset = Vec::with_capacity(n_min * num_classes);
            for ids in &by_class {
                for i in index::sample(&mut rng, ids.len(), n_min) {
                    subset.push(ids[i].to_string());
                }
            }
            subset
        })
        .collect())
}

/// Mean and population standard deviation of macro-F1 over `subsets`.
pub fn subset_score(
    set: &PredictionSet,
    refs: &BTreeMap<String, usize>,
    subsets: &[Vec<String>],
    num_classes: usize,
) -> Result<(f64, f64)> {
    if subsets.is_empty() {
        return Err(Error::config("no evaluation subsets"));
    }
    let mut scores = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let ids: Vec<&str> = subset.iter().map(String::as_str).collect();
        let preds = set.aligned(&ids)?;
        let truth: Vec<usize> = ids
            .iter()
            .map(|id| {
                refs.get(*id)
                    .copied()
                    .ok_or_else(|| Error::data(format!("no reference label for {id:?}")))
            })
            .collect::<Result<_>>()?;
        scores.push(macro_f1(&truth, &preds, num_classes)?);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub members: Vec<String>,
    pub mean_macro_f1: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub spec: EnsembleSpec,
    /// Best first.
    pub table: Vec<ScoreRow>,
}

/// Ranking used by the search: higher mean first, then fewer members, then
/// lexicographic member names.
pub fn rank(a: &ScoreRow, b: &ScoreRow) -> std::cmp::Ordering {
    b.mean_macro_f1
        .total_cmp(&a.mean_macro_f1)
        .then(a.members.len().cmp(&b.members.len()))
        .then_with(|| a.members.cmp(&b.members))
}

/// Scores every member set of size ≥ 3 that contains `best_model` and
/// returns the top-ranked one with `best_model` as tiebreaker.
pub fn ensemble_search(
    sets: &[PredictionSet],
    best_model: &str,
    refs: &BTreeMap<String, usize>,
    subsets: &[Vec<String>],
    num_classes: usize,
) -> Result<SearchResult> {
    let names: BTreeSet<&str> = sets.iter().map(|s| s.model_name.as_str()).collect();
    if names.len() != sets.len() {
        return Err(Error::config("prediction sets must have distinct model names"));
    }
    if sets.len() < MIN_ENSEMBLE {
        return Err(Error::config(format!(
            "ensemble search needs at least {MIN_ENSEMBLE} candidate prediction sets, got {}",
            sets.len()
        )));
    }
    if !names.contains(best_model) {
        return Err(Error::config(format!("best model {best_model:?} is not among the candidates")));
    }
    let others: Vec<&str> = names.iter().copied().filter(|n| *n != best_model).collect();
    if others.len() >= 30 {
        return Err(Error::config("too many candidates for exhaustive search"));
    }
    let mut specs = Vec::new();
    for mask in 0u64..(1u64 << others.len()) {
        if (mask.count_ones() as usize) + 1 < MIN_ENSEMBLE {
            continue;
        }
        let members = others
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, n)| *n)
            .chain([best_model]);
        specs.push(EnsembleSpec::new(members, best_model)?);
    }
    let mut table: Vec<ScoreRow> = specs
        .par_iter()
        .map(|spec| {
            let voted = majority_vote(sets, spec)?;
            let (mean, std) = subset_score(&voted, refs, subsets, num_classes)?;
            Ok(ScoreRow {
                members: spec.members.clone(),
                mean_macro_f1: mean,
                std,
            })
        })
        .collect::<Result<_>>()?;
    table.sort_by(rank);
    let spec = EnsembleSpec::new(table[0].members.clone(), best_model)?;
    Ok(SearchResult { spec, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn set(name: &str, labels: &[usize]) -> PredictionSet {
        let p = labels.iter().enumerate().map(|(i, &l)| (format!("u{i}"), l)).collect();
        PredictionSet::new(name, p)
    }

    #[test]
    fn strict_majority_wins() {
        let sets = [set("a", &[0]), set("b", &[0]), set("c", &[1])];
        let spec = EnsembleSpec::new(["a", "b", "c"], "c").unwrap();
        assert_eq!(majority_vote(&sets, &spec).unwrap().predictions["u0"], 0);
    }

    #[test]
    fn three_way_tie_defers_to_tiebreaker() {
        let sets = [set("a", &[0]), set("b", &[1]), set("c", &[2])];
        let spec = EnsembleSpec::new(["a", "b", "c"], "b").unwrap();
        assert_eq!(majority_vote(&sets, &spec).unwrap().predictions["u0"], 1);
    }

    #[test]
    fn tie_outside_tiebreaker_label_still_defers() {
        let sets = [set("a", &[0]), set("b", &[0]), set("c", &[1]), set("d", &[1]), set("e", &[2])];
        let spec = EnsembleSpec::new(["a", "b", "c", "d", "e"], "e").unwrap();
        assert_eq!(majority_vote(&sets, &spec).unwrap().predictions["u0"], 2);
    }

    #[test]
    fn vote_errors() {
        let sets = [set("a", &[0]), set("b", &[0]), set("c", &[1, 1])];
        let spec = EnsembleSpec::new(["a", "b", "c"], "a").unwrap();
        assert!(matches!(majority_vote(&sets, &spec), Err(Error::Data(_))));
        assert!(matches!(EnsembleSpec::new(["a", "b", "c"], "z"), Err(Error::Config(_))));
        assert!(matches!(EnsembleSpec::new(["a", "b"], "a"), Err(Error::Config(_))));
    }

    #[test]
    fn vote_ignores_member_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sets: Vec<PredictionSet> = ["a", "b", "c", "d"]
            .iter()
            .map(|n| set(n, &(0..50).map(|_| rng.random_range(0..3)).collect::<Vec<_>>()))
            .collect();
        let spec = EnsembleSpec::new(["d", "b", "a", "c"], "b").unwrap();
        let first = majority_vote(&sets, &spec).unwrap();
        sets.reverse();
        assert_eq!(majority_vote(&sets, &spec).unwrap(), first);
    }

    #[test]
    fn balanced_subset_composition() {
        let mut refs = BTreeMap::new();
        for (c, n) in [5, 7, 9].into_iter().enumerate() {
            for i in 0..n {
                refs.insert(format!("c{c}-{i}"), c);
            }
        }
        let subsets = balanced_subsets(&refs, 3, DEFAULT_SUBSETS, 4).unwrap();
        assert_eq!(subsets.len(), 100);
        for s in &subsets {
            assert_eq!(s.len(), 15);
            let unique: BTreeSet<_> = s.iter().collect();
            assert_eq!(unique.len(), 15);
            for c in 0..3 {
                assert_eq!(s.iter().filter(|id| refs[*id] == c).count(), 5);
            }
        }
        assert_eq!(balanced_subsets(&refs, 3, 100, 4).unwrap(), subsets);
        assert!(matches!(balanced_subsets(&refs, 4, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn three_candidates_force_a_single_row() {
        let refs: BTreeMap<String, usize> = (0..6).map(|i| (format!("u{i}"), i % 2)).collect();
        let sets = [set("a", &[0, 1, 0, 1, 0, 1]), set("b", &[0; 6]), set("c", &[1; 6])];
        let subsets = balanced_subsets(&refs, 2, 10, 0).unwrap();
        let r = ensemble_search(&sets, "a", &refs, &subsets, 2).unwrap();
        assert_eq!(r.table.len(), 1);
        assert_eq!(r.spec.members, ["a", "b", "c"]);
        assert_eq!(r.spec.tiebreaker, "a");
        assert!(matches!(
            ensemble_search(&sets[..2], "a", &refs, &subsets, 2),
            Err(Error::Config(_))
        ));
    }
}
