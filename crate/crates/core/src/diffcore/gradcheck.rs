//! Central finite-difference verification of tape gradients.
//!
//! The scalar under test is the sum of all entries of the forward output. Each
//! trainable parameter entry is perturbed by ±ε and the numeric slope is
//! compared to the analytic gradient with relative error
//! `|a − n| / max(|a|, |n|, 1e-8)`.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Tolerance every layer must meet at 64-bit precision.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Doubles the largest analytic gradient entry before comparison, to prove
    /// the checker catches a wrong backward pass.
    pub inject_fault: bool,
    /// Checks at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            inject_fault: false,
            max_entries_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
    /// Set when the check could not run to completion (non-finite forward).
    pub failure: Option<String>,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.failure.is_none() && self.max_rel_err < tol
    }

    fn failed(msg: String) -> Self {
        Self {
            max_rel_err: f64::INFINITY,
            worst_param: String::new(),
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            entries_checked: 0,
            failure: Some(msg),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, 1e-8)
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for a central difference of an objective of magnitude
/// `objective`: 10^5 units of its roundoff `u·|f|/eps`. Gradients smaller
/// than this (e.g. exactly zero by softmax shift invariance) are compared on
/// that absolute scale instead of against pure roundoff.
pub fn roundoff_floor(objective: f64, eps: f64) -> f64 {
    (1e5 * f64::EPSILON * objective.abs().max(1.0) / eps).max(1e-8)
}

fn eval_sum<F>(store: &ParamStore, forward: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = forward(&mut tape)?;
    Ok(tape.value(out).sum())
}

/// Runs the check over every trainable entry of `store`. Values are restored
/// before returning.
pub fn gradcheck<F>(store: &mut ParamStore, cfg: &GradCheckConfig, forward: F) -> GradReport
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let out = match forward(&mut tape) {
            Ok(v) => v,
            Err(e) => return GradReport::failed(format!("forward failed: {e}")),
        };
        if !tape.value(out).is_finite() {
            return GradReport::failed("non-finite forward value".into());
        }
        tape.backward_params(out)
    };
    let mut analytic = analytic.0;

    if cfg.inject_fault {
        let mut best: Option<(usize, usize, f64)> = None;
        for (k, (_, g)) in analytic.iter().enumerate() {
            for (i, v) in g.data().iter().enumerate() {
                if best.is_none_or(|(_, _, b)| v.abs() > b) {
                    best = Some((k, i, v.abs()));
                }
            }
        }
        if let Some((k, i, _)) = best {
            analytic[k].1.data_mut()[i] *= 2.0;
        }
    }

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
        failure: None,
    };
    for (id, grad) in &analytic {
        let n = grad.len();
        let entries: Vec<usize> = match cfg.max_entries_per_param {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        for i in entries {
            let orig = store.value(*id).data()[i];
            store.value_mut(*id).data_mut()[i] = orig + cfg.eps;
            let plus = eval_sum(store, &forward);
            store.value_mut(*id).data_mut()[i] = orig - cfg.eps;
            let minus = eval_sum(store, &forward);
            store.value_mut(*id).data_mut()[i] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                _ => {
                    let name = store.get(*id).name.clone();
                    return GradReport::failed(format!(
                        "non-finite forward while perturbing {name}[{i}]"
                    ));
                }
            };
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let floor = roundoff_floor(plus.abs().max(minus.abs()), cfg.eps);
            let err = relative_error_with_floor(grad.data()[i], numeric, floor);
            report.entries_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = store.get(*id).name.clone();
                report.worst_index = i;
                report.worst_analytic = grad.data()[i];
                report.worst_numeric = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::layers::Linear;
    use crate::diffcore::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_case(seed: u64) -> (ParamStore, Linear, crate::diffcore::params::ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let x = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let x = store.add("input.x", x);
        let lin = Linear::new(&mut store, "lin", 4, 2, &mut rng);
        store.value_mut(lin.b).data_mut()[1] = 0.3;
        (store, lin, x)
    }

    #[test]
    fn linear_passes_tightly() {
        let (mut store, lin, x) = linear_case(1);
        let report = gradcheck(&mut store, &GradCheckConfig::default(), |t| {
            let xv = t.param(x);
            lin.forward(t, xv)
        });
        assert!(report.max_rel_err < 1e-6, "{report:?}");
        assert_eq!(report.entries_checked, 12 + 8 + 2);
    }

    #[test]
    fn injected_fault_is_detected() {
        let (mut store, lin, x) = linear_case(2);
        let cfg = GradCheckConfig {
            inject_fault: true,
            ..Default::default()
        };
        let report = gradcheck(&mut store, &cfg, |t| {
            let xv = t.param(x);
            lin.forward(t, xv)
        });
        assert!(report.max_rel_err > 0.1, "{report:?}");
        assert!(!report.passed(GRADCHECK_TOL));
    }

    #[test]
    fn non_finite_forward_is_a_failure() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::row_vector(vec![f64::NAN]));
        let report = gradcheck(&mut store, &GradCheckConfig::default(), |t| Ok(t.param(a)));
        assert!(report.failure.is_some());
        assert!(!report.passed(GRADCHECK_TOL));
    }

    #[test]
    fn values_are_restored() {
        let (mut store, lin, x) = linear_case(3);
        let before = store.value(lin.w).clone();
        gradcheck(&mut store, &GradCheckConfig::default(), |t| {
            let xv = t.param(x);
            lin.forward(t, xv)
        });
        assert_eq!(store.value(lin.w), &before);
    }
}
