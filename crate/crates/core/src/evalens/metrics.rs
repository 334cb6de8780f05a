use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion_counts(refs: &[usize], preds: &[usize], num_classes: usize) -> Result<Vec<ClassCounts>> {
    if refs.len() != preds.len() {
        return Err(Error::data(format!(
            "{} references but {} predictions",
            refs.len(),
            preds.len()
        )));
    }
    let mut counts = vec![ClassCounts::default(); num_classes];
    for (i, (&r, &p)) in refs.iter().zip(preds).enumerate() {
        if r >= num_classes || p >= num_classes {
            return Err(Error::data(format!(
                "label out of range at position {i}: reference {r}, prediction {p}, {num_classes} classes"
            )));
        }
        if r == p {
            counts[r].tp += 1;
        } else {
            counts[r].fn_ += 1;
            counts[p].fp += 1;
        }
    }
    Ok(counts)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn from_counts(counts: &[ClassCounts]) -> Self {
        let k = counts.len().max(1) as f64;
        let mut f1 = 0.0;
        let mut p = 0.0;
        let mut r = 0.0;
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for c in counts {
            f1 += ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
            p += ratio(c.tp, c.tp + c.fp);
            r += ratio(c.tp, c.tp + c.fn_);
            tp += c.tp;
            fp += c.fp;
            fn_ += c.fn_;
        }
        Self {
            macro_f1: f1 / k,
            micro_f1: ratio(2 * tp, 2 * tp + fp + fn_),
            macro_precision: p / k,
            macro_recall: r / k,
            accuracy: ratio(tp, tp + fn_),
        }
    }
}

pub fn metrics(refs: &[usize], preds: &[usize], num_classes: usize) -> Result<Metrics> {
    Ok(Metrics::from_counts(&confusion_counts(refs, preds, num_classes)?))
}

pub fn macro_f1(refs: &[usize], preds: &[usize], num_classes: usize) -> Result<f64> {
    metrics(refs, preds, num_classes).map(|m| m.macro_f1)
}

pub fn micro_f1(refs: &[usize], preds: &[usize], num_classes: usize) -> Result<f64> {
    metrics(refs, preds, num_classes).map(|m| m.micro_f1)
}

pub fn macro_precision(refs: &[usize], preds: &[usize], num_classes: usize) -> Result<f64> {
    metrics(refs, preds, num_classes).map(|m| m.macro_precision)
}

pub fn macro_recall(refs: &[usize], preds: &[usize], num_classes: usize) -> Result<f64> {
    metrics(refs, preds, num_classes).map(|m| m.macro_recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_score_one() {
        let refs = [0, 1, 2, 2, 1];
        let m = metrics(&refs, &refs, 3).unwrap();
        assert_eq!((m.macro_f1, m.micro_f1, m.macro_precision, m.macro_recall), (1.0, 1.0, 1.0, 1.0));
        for c in confusion_counts(&refs, &refs, 3).unwrap() {
            assert_eq!((c.fp, c.fn_), (0, 0));
        }
    }

    #[test]
    fn single_mismatch_counts() {
        let c = confusion_counts(&[0], &[1], 2).unwrap();
        assert_eq!(c[0], ClassCounts { tp: 0, fp: 0, fn_: 1 });
        assert_eq!(c[1], ClassCounts { tp: 0, fp: 1, fn_: 0 });
    }

    #[test]
    fn hand_case_macro_f1() {
        // Per-class F1: 2/3, 2/3, 1.
        let f = macro_f1(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert!((f - 0.7777777777777777).abs() < 1e-9);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let m = metrics(&[0, 0], &[0, 0], 4).unwrap();
        assert!((m.macro_f1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion_counts(&[0, 1], &[0], 2), Err(Error::Data(_))));
        assert!(matches!(confusion_counts(&[0, 5], &[0, 1], 2), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn micro_f1_equals_accuracy(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60)) {
            let refs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let m = metrics(&refs, &preds, 5).unwrap();
            let acc = refs.iter().zip(&preds).filter(|(a, b)| a == b).count() as f64 / refs.len() as f64;
            prop_assert!((m.micro_f1 - acc).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.macro_f1));
            prop_assert!((0.0..=1.0).contains(&m.micro_f1));
        }
    }
}
