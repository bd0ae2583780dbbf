//! Fixed-capacity experience replay with uniform sampling.

use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::mdp::Transition;

/// A FIFO ring of transitions: once full, pushing evicts the oldest entry.
/// Stored transitions carry the action as *executed*, i.e. after any shield
/// substitution, so learners train on what actually happened.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    /// Creates a buffer holding at most `capacity` transitions.
    ///
    /// # Panics
    /// Panics if `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be at least 1");
        Self {
            capacity,
            storage: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample with replacement; returns `None` while empty.
    pub fn sample<'a>(
        &'a self,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Option<Vec<&'a Transition>> {
        if self.storage.is_empty() {
            return None;
        }
        Some(
            (0..count)
                .map(|_| &self.storage[rng.random_range(0..self.storage.len())])
                .collect(),
        )
    }
}
