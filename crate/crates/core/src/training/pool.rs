use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nca::CellState;

/// What the loss of a pooled state is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetRef {
    Image { index: usize },
    Label { image: usize, label: usize },
    Video { sequence: usize, offset: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    /// Single-item state snapshot.
    pub state: CellState<f32>,
    pub target: TargetRef,
}

/// Bounded FIFO of evolved states.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePool {
    capacity: usize,
    entries: VecDeque<PoolEntry>,
}

impl SamplePool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, evicting the oldest one when full.
    pub fn commit(&mut self, entry: PoolEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Deep copy of a uniformly chosen entry.
    pub fn sample(&self, rng: &mut impl Rng) -> Option<PoolEntry> {
        if self.entries.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.entries.len());
        Some(self.entries[i].clone())
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}
