use crate::diffcore::tape::focal_value;
use crate::error::{Error, Result};

/// `w_c = N / (K · n_c)`; balanced counts give all ones.
pub fn compute_class_weights(counts: &[usize], names: Option<&[String]>) -> Result<Vec<f64>> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        let name = names
            .and_then(|n| n.get(c))
            .map(|n| format!("{c} ({n})"))
            .unwrap_or_else(|| c.to_string());
        return Err(Error::config(format!("class {name} has no training examples")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

fn check(logits: &[f64], target: usize, weights: &[f64]) -> Result<()> {
    if target >= logits.len() || target >= weights.len() {
        return Err(Error::data(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::data("non-finite logits"));
    }
    Ok(())
}

/// `-w_target · log softmax(logits)[target]`.
pub fn weighted_ce(logits: &[f64], target: usize, weights: &[f64]) -> Result<f64> {
    check(logits, target, weights)?;
    Ok(focal_value(logits, target, weights[target], 0.0))
}

/// `-w_target · (1 - p_target)^gamma · log p_target`.
pub fn focal_loss(logits: &[f64], target: usize, weights: &[f64], gamma: f64) -> Result<f64> {
    check(logits, target, weights)?;
    if !(gamma >= 0.0) {
        return Err(Error::config(format!("focal gamma must be ≥ 0, got {gamma}")));
    }
    Ok(focal_value(logits, target, weights[target], gamma))
}

/// Sum of per-example weighted losses divided by the sum of the batch
/// targets' weights.
pub fn batch_weighted_mean(losses: &[f64], targets: &[usize], weights: &[f64]) -> f64 {
    let denom: f64 = targets.iter().map(|&t| weights[t]).sum();
    losses.iter().sum::<f64>() / denom
}
