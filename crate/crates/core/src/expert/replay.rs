//! Bounded FIFO experience replay.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One joint step as seen by the centralized expert. `obs` is the expert
/// input (local prefixes, no message slots) and `action` holds one one-hot
/// block per movable agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub obs: Vec<S>,
    pub action: Vec<S>,
    pub reward: S,
    pub next_obs: Vec<S>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<S> {
    items: VecDeque<Transition<S>>,
    capacity: usize,
}

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay_capacity", "must be positive"));
        }
        Ok(ReplayBuffer { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition<S>) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::NonFinite("transition reward".into()));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        self.items.iter()
    }

    /// `batch` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition<S>>> {
        if batch == 0 || batch > self.items.len() {
            return Err(Error::DatasetTooSmall { have: self.items.len(), need: batch.max(1) });
        }
        Ok(index::sample(rng, self.items.len(), batch).into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(k: usize) -> Transition<f64> {
        Transition { obs: vec![k as f64], action: vec![1.0], reward: k as f64, next_obs: vec![0.0], done: false }
    }

    proptest! {
        #[test]
        fn keeps_exactly_the_newest(cap in 1usize..40, extra in 0usize..60) {
            let mut buf = ReplayBuffer::new(cap).unwrap();
            for k in 0..cap + extra {
                buf.push(tr(k)).unwrap();
            }
            prop_assert_eq!(buf.len(), cap);
            let kept: Vec<usize> = buf.iter().map(|t| t.reward as usize).collect();
            let want: Vec<usize> = (extra..cap + extra).collect();
            prop_assert_eq!(kept, want);
        }
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut buf = ReplayBuffer::new(100).unwrap();
        for k in 0..50 {
            buf.push(tr(k)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let mut ks: Vec<usize> = buf.sample(50, &mut rng).unwrap().iter().map(|t| t.reward as usize).collect();
            ks.sort();
            assert_eq!(ks, (0..50).collect::<Vec<_>>());
        }
        assert!(buf.sample(51, &mut rng).is_err());
    }
}
