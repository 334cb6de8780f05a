use std::collections::BTreeMap;

use fuseser::evalens::{
    balanced_subsets, confusion_counts, ensemble_search, majority_vote, subset_score, EnsembleSpec,
    PredictionSet, DEFAULT_SUBSETS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn confusion_counts_match_an_independent_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(516);
    let k = 5;
    let refs: Vec<usize> = (0..1000).map(|_| rng.random_range(0..k)).collect();
    let preds: Vec<usize> = (0..1000).map(|_| rng.random_range(0..k)).collect();
    let mut table = vec![vec![0usize; k]; k];
    for (&r, &p) in refs.iter().zip(&preds) {
        table[r][p] += 1;
    }
    let counts = confusion_counts(&refs, &preds, k).unwrap();
    for c in 0..k {
        let row: usize = table[c].iter().sum();
        let col: usize = table.iter().map(|r| r[c]).sum();
        assert_eq!(counts[c].tp, table[c][c]);
        assert_eq!(counts[c].fn_, row - table[c][c]);
        assert_eq!(counts[c].fp, col - table[c][c]);
    }
}

#[test]
fn balanced_subsets_have_exact_composition_for_twenty_seeds() {
    let sizes = [5usize, 7, 9];
    let mut refs = BTreeMap::new();
    for (c, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            refs.insert(format!("c{c}-{i}"), c);
        }
    }
    for seed in 0..20 {
        let subsets = balanced_subsets(&refs, 3, DEFAULT_SUBSETS, seed).unwrap();
        assert_eq!(subsets.len(), 100);
        for s in &subsets {
            assert_eq!(s.len(), 15);
            let mut per_class = [0usize; 3];
            let mut uniq = s.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), s.len(), "repeat inside a subset");
            for id in s {
                per_class[refs[id]] += 1;
            }
            assert_eq!(per_class, [5, 5, 5]);
        }
        assert_eq!(subsets, balanced_subsets(&refs, 3, DEFAULT_SUBSETS, seed).unwrap());
    }
}

fn sets_from(preds: &[Vec<usize>]) -> (Vec<PredictionSet>, BTreeMap<String, usize>) {
    let n = preds[0].len();
    let refs: BTreeMap<String, usize> = (0..n).map(|i| (format!("u{i:02}"), i % 3)).collect();
    let sets = preds
        .iter()
        .enumerate()
        .map(|(m, p)| PredictionSet::new(format!("m{m}"), refs.keys().cloned().zip(p.iter().copied()).collect()))
        .collect();
    (sets, refs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unanimous_utterances_ignore_the_tiebreaker(
        preds in prop::collection::vec(prop::collection::vec(0usize..3, 12), 3..6),
        tb in 0usize..3,
    ) {
        let (sets, _) = sets_from(&preds);
        let tb = tb % sets.len();
        let spec = EnsembleSpec::new(sets.iter().map(|s| s.model_name.clone()), format!("m{tb}")).unwrap();
        let voted = majority_vote(&sets, &spec).unwrap();
        for (u, (id, &label)) in voted.predictions.iter().enumerate() {
            if preds.iter().all(|p| p[u] == preds[0][u]) {
                prop_assert_eq!(label, preds[0][u], "{}", id);
            }
        }
    }

    #[test]
    fn returned_spec_scores_at_least_every_admissible_spec(
        preds in prop::collection::vec(prop::collection::vec(0usize..3, 18), 3..6),
        best in 0usize..5,
        seed in 0u64..1000,
    ) {
        let (sets, refs) = sets_from(&preds);
        let best = format!("m{}", best % sets.len());
        let subsets = balanced_subsets(&refs, 3, 20, seed).unwrap();
        let result = ensemble_search(&sets, &best, &refs, &subsets, 3).unwrap();
        prop_assert!(result.spec.members.contains(&best));
        prop_assert_eq!(&result.spec.tiebreaker, &best);
        let chosen = subset_score(&majority_vote(&sets, &result.spec).unwrap(), &refs, &subsets, 3).unwrap().0;
        for row in &result.table {
            prop_assert!(row.members.contains(&best));
            prop_assert!(row.members.len() >= 3);
            let spec = EnsembleSpec::new(row.members.clone(), best.clone()).unwrap();
            let score = subset_score(&majority_vote(&sets, &spec).unwrap(), &refs, &subsets, 3).unwrap().0;
            prop_assert_eq!(score, row.mean_macro_f1);
            prop_assert!(chosen >= score);
        }
    }
}
