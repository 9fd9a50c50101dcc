use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::{MetaRlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only for genuinely terminal steps; horizon cut-offs still bootstrap.
    pub terminal: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self.state.iter().chain(&self.action).chain(&self.next_state).all(|v| v.is_finite())
    }
}

/// Row-stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    /// `0` for terminal rows, `1` otherwise.
    pub not_done: Vec<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        let n = items.len();
        let sd = items.first().map_or(0, |t| t.state.len());
        let ad = items.first().map_or(0, |t| t.action.len());
        Self {
            states: Array2::from_shape_fn((n, sd), |(i, j)| items[i].state[j]),
            actions: Array2::from_shape_fn((n, ad), |(i, j)| items[i].action[j]),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: Array2::from_shape_fn((n, sd), |(i, j)| items[i].next_state[j]),
            not_done: items.iter().map(|t| if t.terminal { 0.0 } else { 1.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Capacity-bounded FIFO.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::new() }
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

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(MetaRlError::NonFinite("transition".into()));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Distinct indices within one batch; a batch never exceeds the buffer.
    pub fn sample(&self, rng: &mut ChaCha8Rng, batch_size: usize) -> Option<Batch> {
        if self.items.is_empty() {
            return None;
        }
        let n = batch_size.min(self.items.len());
        let picked: Vec<&Transition> = sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect();
        Some(Batch::from_transitions(&picked))
    }

    /// Shuffled split into a training part holding `train_fraction` of the
    /// items and a validation part with the rest.
    pub fn split(&self, rng: &mut ChaCha8Rng, train_fraction: f64) -> (ReplayBuffer, ReplayBuffer) {
        let n = self.items.len();
        let order = sample(rng, n, n).into_vec();
        let n_train = ((n as f64) * train_fraction).round() as usize;
        let mut train = ReplayBuffer::new(self.capacity);
        let mut val = ReplayBuffer::new(self.capacity);
        for (pos, i) in order.into_iter().enumerate() {
            let target = if pos < n_train { &mut train } else { &mut val };
            target.items.push_back(self.items[i].clone());
        }
        (train, val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn t(i: usize) -> Transition {
        Transition {
            state: vec![i as f64],
            action: vec![0.0],
            reward: i as f64,
            next_state: vec![i as f64 + 1.0],
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i)).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().map(|x| x.reward).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut b = ReplayBuffer::new(3);
        let mut bad = t(0);
        bad.reward = f64::NAN;
        assert!(b.push(bad).is_err());
        assert!(b.is_empty());
        assert!(b.sample(&mut ChaCha8Rng::seed_from_u64(0), 4).is_none());
    }

    #[test]
    fn split_partitions_everything() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..50 {
            b.push(t(i)).unwrap();
        }
        let (tr, va) = b.split(&mut ChaCha8Rng::seed_from_u64(1), 0.8);
        assert_eq!((tr.len(), va.len()), (40, 10));
        let mut all: Vec<f64> = tr.iter().chain(va.iter()).map(|x| x.reward).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..50).map(|i| i as f64).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn sampling_is_distinct_and_deterministic(n in 1usize..200, batch in 1usize..64, seed in 0u64..1000) {
            let mut b = ReplayBuffer::new(500);
            for i in 0..n {
                b.push(t(i)).unwrap();
            }
            let x = b.sample(&mut ChaCha8Rng::seed_from_u64(seed), batch).unwrap();
            let y = b.sample(&mut ChaCha8Rng::seed_from_u64(seed), batch).unwrap();
            prop_assert_eq!(&x, &y);
            let mut r = x.rewards.clone();
            r.sort_by(f64::total_cmp);
            r.dedup();
            prop_assert_eq!(r.len(), batch.min(n));
        }

        #[test]
        fn capacity_is_never_exceeded(cap in 1usize..20, n in 0usize..60) {
            let mut b = ReplayBuffer::new(cap);
            for i in 0..n {
                b.push(t(i)).unwrap();
                prop_assert!(b.len() <= cap);
            }
        }
    }
}
