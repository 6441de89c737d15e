//! Flat f32 arenas and the handles that point into them.

use serde::Serialize;

use super::BackendError;
use crate::data::HostTensor;

/// Row-major 2-d shape. Lower ranks are padded with leading ones and higher
/// ranks fold their leading dimensions into the rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Shape {
        Shape { rows, cols }
    }

    pub fn from_dims(dims: &[usize]) -> Shape {
        match dims {
            [] => Shape::new(1, 1),
            [n] => Shape::new(1, *n),
            [.., c] => Shape::new(dims[..dims.len() - 1].iter().product(), *c),
        }
    }

    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TensorHandle {
    pub arena_id: u32,
    pub offset: usize,
    pub shape: Shape,
    pub strides: [usize; 2],
}

impl TensorHandle {
    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn is_contiguous(&self) -> bool {
        self.strides == [self.shape.cols, 1]
    }

    /// Handle to the `i`-th of `n` equally shaped tensors stored back to back.
    pub fn nth(&self, i: usize, shape: Shape) -> TensorHandle {
        TensorHandle {
            arena_id: self.arena_id,
            offset: self.offset + i * shape.len(),
            shape,
            strides: [shape.cols, 1],
        }
    }
}

/// Bump allocator over one growable f32 buffer. Nothing is freed until the
/// arena is reset.
#[derive(Debug)]
pub struct Arena {
    id: u32,
    buf: Vec<f32>,
}

impl Arena {
    pub fn new(id: u32) -> Arena {
        Arena { id, buf: Vec::new() }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    /// Elements allocated so far.
    pub fn used(&self) -> usize {
        self.buf.len()
    }

    pub fn reset(&mut self) {
        self.buf.clear();
    }

    /// Zero-filled contiguous tensor.
    pub fn alloc(&mut self, shape: Shape) -> TensorHandle {
        self.alloc_many(1, shape)
    }

    /// `n` contiguous tensors of one shape, back to back; returns the first.
    pub fn alloc_many(&mut self, n: usize, shape: Shape) -> TensorHandle {
        let offset = self.buf.len();
        self.buf.resize(offset + n * shape.len(), 0.0);
        TensorHandle {
            arena_id: self.id,
            offset,
            shape,
            strides: [shape.cols, 1],
        }
    }

    pub fn upload(&mut self, t: &HostTensor) -> TensorHandle {
        let h = self.alloc(Shape::from_dims(&t.shape));
        self.buf[h.offset..h.offset + h.len()].copy_from_slice(&t.data);
        h
    }

    pub fn upload_slice(&mut self, shape: Shape, data: &[f32]) -> TensorHandle {
        assert_eq!(shape.len(), data.len());
        let h = self.alloc(shape);
        self.buf[h.offset..h.offset + h.len()].copy_from_slice(data);
        h
    }

    pub fn check(&self, h: &TensorHandle) -> Result<(), BackendError> {
        if h.arena_id != self.id {
            return Err(BackendError::ForeignHandle {
                handle: h.arena_id,
                arena: self.id,
            });
        }
        if !h.is_contiguous() || h.offset + h.len() > self.buf.len() {
            return Err(BackendError::BadHandle(*h));
        }
        Ok(())
    }

    pub fn slice(&self, h: &TensorHandle) -> &[f32] {
        debug_assert!(h.is_contiguous());
        &self.buf[h.offset..h.offset + h.len()]
    }

    pub fn slice_mut(&mut self, h: &TensorHandle) -> &mut [f32] {
        &mut self.buf[h.offset..h.offset + h.len()]
    }

    /// Everything below `split` for reading and everything from it on for
    /// writing. Handles allocated after `split` was taken land in the
    /// writable half.
    pub(crate) fn split_at(&mut self, split: usize) -> (&[f32], &mut [f32]) {
        let (lo, hi) = self.buf.split_at_mut(split);
        (lo, hi)
    }

    pub fn download(&self, h: &TensorHandle, dims: &[usize]) -> HostTensor {
        HostTensor::new(dims.to_vec(), self.slice(h).to_vec())
    }
}
