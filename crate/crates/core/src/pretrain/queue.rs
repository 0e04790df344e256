use std::collections::VecDeque;

use crate::ndgrad::{GradError, Graph, Var};
use crate::pretrain::PretrainError;
use crate::scalar::Scalar;

/// Unit-norm tolerance for stored keys.
pub const UNIT_TOL: f64 = 1e-6;

/// Fixed-capacity FIFO of detached key vectors, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyQueue<T> {
    capacity: usize,
    dim: usize,
    keys: VecDeque<Vec<T>>,
}

impl<T: Scalar> KeyQueue<T> {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self { capacity, dim, keys: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.keys.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.keys.iter().map(|k| k.as_slice())
    }

    /// Appends `keys` in order, evicting the oldest entries beyond capacity.
    pub fn enqueue<K: AsRef<[T]>>(&mut self, keys: &[K]) -> Result<(), PretrainError> {
        for k in keys {
            let k = k.as_ref();
            if k.len() != self.dim {
                return Err(PretrainError::Dimension { expected: self.dim, got: k.len() });
            }
            let norm = k.iter().map(|&v| v * v).sum::<T>().sqrt().to_f64_lossy();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(PretrainError::NotUnit(norm));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for k in keys {
            if self.keys.len() == self.capacity {
                self.keys.pop_front();
            }
            self.keys.push_back(k.as_ref().to_vec());
        }
        Ok(())
    }

    /// Contents as a constant `[len, dim]` matrix, or `None` when empty.
    pub fn as_constant(&self, g: &mut Graph<T>) -> Result<Option<Var>, GradError> {
        if self.keys.is_empty() {
            return Ok(None);
        }
        let values = self.keys.iter().flat_map(|k| k.iter().copied()).collect();
        g.constant(vec![self.keys.len(), self.dim], values).map(Some)
    }
}

/// One global and one local queue per feature level.
#[derive(Clone, Debug, PartialEq)]
pub struct QueuePair<T> {
    pub global: Vec<KeyQueue<T>>,
    pub local: Vec<KeyQueue<T>>,
}

impl<T: Scalar> QueuePair<T> {
    pub fn new(levels: usize, capacity: usize, dim: usize) -> Self {
        Self {
            global: (0..levels).map(|_| KeyQueue::new(capacity, dim)).collect(),
            local: (0..levels).map(|_| KeyQueue::new(capacity, dim)).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.global.len()
    }

    pub fn all_full(&self) -> bool {
        self.global.iter().chain(&self.local).all(|q| q.is_full())
    }
}
