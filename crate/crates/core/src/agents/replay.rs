//! Experience storage.

use std::collections::VecDeque;

use rand::Rng;

use crate::action_space::{Allocation, AllocationGrid};
use crate::env::Observation;
use crate::error::{Error, Result};

/// One experience tuple `(s, a, R, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: Allocation,
    /// `action` as fractions of the total bandwidth, the form the heads consume.
    pub action_vector: Vec<f64>,
    /// Enumeration index of `action`, used by the flat Q-network.
    pub action_index: usize,
    pub reward: f64,
    pub next_state: Observation,
}

impl Transition {
    pub fn new(
        grid: &AllocationGrid,
        state: Observation,
        action: Allocation,
        reward: f64,
        next_state: Observation,
    ) -> Result<Self> {
        let action_index = grid.action_index(&action)?;
        Ok(Self {
            action_vector: action.fractions(grid),
            action_index,
            state,
            action,
            reward,
            next_state,
        })
    }
}

/// Bounded FIFO store, sampled uniformly with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    /// Oldest first.
    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::Argument(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        Ok((0..size)
            .map(|_| rng.random_range(0..self.storage.len()))
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(size, rng)?
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }
}
