use super::config::TrainConfig;
use crate::diffcore::{Matrix, ParamStore};
use crate::error::{Error, Result};

/// Global L2 norm over `grads`; rescales all of them by `threshold / norm`
/// when the norm exceeds `threshold`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [&mut Matrix], threshold: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

/// Clips the trainable gradients held in `store`.
pub fn clip_store_grads(store: &mut ParamStore, threshold: f64) -> f64 {
    let mut grads: Vec<&mut Matrix> = store
        .iter_mut()
        .filter(|p| p.trainable)
        .map(|p| &mut p.grad)
        .collect();
    clip_grad_norm(&mut grads, threshold)
}

/// AdamW moments, one pair per parameter slot of the store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One step over every trainable parameter: decoupled weight decay
    /// `θ ← θ − lr·wd·θ`, then the bias-corrected Adam update. Aborts without
    /// touching anything if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, cfg: &TrainConfig) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::config("optimizer state does not match the parameter store"));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && !p.grad.is_finite()) {
            return Err(Error::NonFiniteGrad(p.name.clone()));
        }
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * cfg.weight_decay;
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let theta = p.value.data_mut();
            let g = p.grad.data();
            for (((th, &gi), mi), vi) in theta.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *th *= decay;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *th -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
        Ok(())
    }
}
