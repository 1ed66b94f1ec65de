use crate::error::{Error, Result};
use crate::numerics::{dot, Tensor};

/// Fixed-capacity FIFO ring of unit-norm teacher features.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryQueue {
    capacity: usize,
    dim: usize,
    /// `capacity × dim`, slot `i` at row `i`.
    slots: Tensor,
    /// Next slot to overwrite.
    cursor: usize,
    len: usize,
}

impl MemoryQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            slots: Tensor::zeros(&[capacity, dim]),
            cursor: 0,
            len: 0,
        }
    }

    /// Rebuilds a queue from raw parts (checkpoint restore).
    pub fn from_parts(slots: Tensor, cursor: usize, len: usize) -> Result<Self> {
        if slots.rank() != 2 {
            return Err(Error::Checkpoint("queue storage must be a matrix".into()));
        }
        let capacity = slots.rows();
        if len > capacity || (capacity > 0 && cursor >= capacity) || (capacity == 0 && cursor != 0) {
            return Err(Error::Checkpoint(format!(
                "queue cursor {cursor} / length {len} invalid for capacity {capacity}"
            )));
        }
        Ok(Self {
            capacity,
            dim: slots.cols(),
            slots,
            cursor,
            len,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn slots(&self) -> &Tensor {
        &self.slots
    }

    /// Stored features, oldest first.
    pub fn contents(&self) -> Tensor {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        let idx: Vec<usize> = (0..self.len).map(|i| (start + i) % self.capacity).collect();
        self.slots.select_rows(&idx)
    }

    /// Appends `feats` row by row, overwriting the oldest entries once full.
    pub fn enqueue(&mut self, feats: &Tensor) -> Result<()> {
        let b = if feats.rank() == 2 { feats.rows() } else { feats.len() };
        if b == 0 {
            return Ok(());
        }
        if feats.rank() != 2 || feats.cols() != self.dim {
            return Err(Error::Dimension {
                op: "queue enqueue",
                left: vec![self.capacity, self.dim],
                right: feats.shape().to_vec(),
            });
        }
        if b > self.capacity {
            return Err(Error::Config(format!(
                "cannot enqueue {b} rows into a queue of capacity {}",
                self.capacity
            )));
        }
        for i in 0..b {
            let row = feats.row(i);
            let n = dot(row, row).sqrt();
            if n.is_nan() || (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("queue row {i} is not unit-norm (norm {n})")));
            }
        }
        for i in 0..b {
            self.slots.row_mut(self.cursor).copy_from_slice(feats.row(i));
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.len = (self.len + b).min(self.capacity);
        Ok(())
    }
}
