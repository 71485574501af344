//! Bounded FIFO experience storage and a pooled snapshot view.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True only for real terminal states (no bootstrap). Step-cap
    /// truncations are stored with `done = false`.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        }
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

    /// Total number of pushes over the buffer's lifetime.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn newest(&self) -> Option<&Transition> {
        self.items.back()
    }

    /// `batch_size` uniform draws with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        if self.items.is_empty() {
            return Err(Error::Contract("sample from empty replay buffer".into()));
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.below(self.items.len())])
            .collect())
    }

    /// Debug dump as a JSON array of transitions.
    pub fn dump_json(&self) -> Result<String> {
        let v: Vec<&Transition> = self.items.iter().collect();
        Ok(serde_json::to_string(&v)?)
    }
}

/// Immutable snapshot of the union of several buffers. Sampling is uniform
/// over elements, not over buffers.
#[derive(Debug, Clone)]
pub struct PooledView {
    items: Arc<[Transition]>,
}

impl PooledView {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Vec<&Transition> {
        (0..batch_size)
            .map(|_| &self.items[rng.below(self.items.len())])
            .collect()
    }
}

/// Snapshots the concatenation of `buffers`; later pushes do not show up.
pub fn pool<'a, I>(buffers: I) -> Result<PooledView>
where
    I: IntoIterator<Item = &'a ReplayBuffer>,
{
    let items: Vec<Transition> = buffers
        .into_iter()
        .flat_map(|b| b.iter().cloned())
        .collect();
    if items.is_empty() {
        return Err(Error::Contract("pool over empty buffers".into()));
    }
    Ok(PooledView {
        items: items.into(),
    })
}
