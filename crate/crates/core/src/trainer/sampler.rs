use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One epoch of shuffled batches; the last batch may be short.
pub fn shuffle_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Class-balanced sampler: classes are visited round-robin and each class
/// draws from its own queue, which is reshuffled whenever it runs dry. Queue
/// positions persist across epochs.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    by_class: Vec<Vec<usize>>,
    queues: Vec<Vec<usize>>,
    next_class: usize,
}

impl BalancedSampler {
    pub fn new(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class
                .get_mut(l)
                .ok_or_else(|| Error::data(format!("label {l} at index {i} is out of range")))?
                .push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::config(format!("class {c} has no examples to sample")));
        }
        Ok(Self {
            queues: vec![Vec::new(); num_classes],
            by_class,
            next_class: 0,
        })
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        let max = self.by_class.iter().map(Vec::len).max().unwrap_or(0);
        (self.by_class.len() * max).div_ceil(batch_size.max(1))
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let c = self.next_class;
        self.next_class = (c + 1) % self.by_class.len();
        if self.queues[c].is_empty() {
            let mut q = self.by_class[c].clone();
            q.shuffle(rng);
            q.reverse();
            self.queues[c] = q;
        }
        self.queues[c].pop().expect("refilled queue")
    }

    pub fn epoch<R: Rng + ?Sized>(&mut self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let batch_size = batch_size.max(1);
        (0..self.batches_per_epoch(batch_size))
            .map(|_| (0..batch_size).map(|_| self.draw(rng)).collect())
            .collect()
    }
}

/// One epoch of class-balanced batches from a fresh sampler.
pub fn balanced_batches<R: Rng + ?Sized>(
    labels: &[usize],
    num_classes: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    Ok(BalancedSampler::new(labels, num_classes)?.epoch(batch_size, rng))
}
