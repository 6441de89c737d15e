//! Tensor storage and kernel execution.

pub mod arena;
pub mod batched;
pub mod kernels;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arena::{Arena, Shape, TensorHandle};
pub use batched::{exec_batched, BatchResult};

use crate::ir::OpCode;

/// How batched operands scattered over the arena reach a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatherMode {
    /// Kernels read each instance's operand where it lives.
    #[default]
    Fused,
    /// Non-contiguous operands are first copied into one contiguous buffer.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("handle belongs to arena {handle}, not arena {arena}")]
    ForeignHandle { handle: u32, arena: u32 },
    #[error("handle {0:?} is out of bounds or not contiguous")]
    BadHandle(TensorHandle),
    #[error("instances disagree on shared input {input}")]
    SharedMismatch { input: usize },
    #[error("expected {expected} inputs per instance, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("input {input} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { input: usize, expected: Shape, got: Shape },
    #[error("empty batch")]
    EmptyBatch,
}

/// Runs one unbatched prim-op and stores the result in `arena`.
pub fn exec_primop(op: OpCode, args: &[TensorHandle], arena: &mut Arena) -> Result<TensorHandle, BackendError> {
    if args.len() != op.arity() {
        return Err(BackendError::Arity {
            expected: op.arity(),
            got: args.len(),
        });
    }
    for h in args {
        arena.check(h)?;
    }
    let dims: Vec<[usize; 2]> = args.iter().map(|h| [h.shape.rows, h.shape.cols]).collect();
    let shapes: Vec<&[usize]> = dims.iter().map(|d| d.as_slice()).collect();
    let data: Vec<&[f32]> = args.iter().map(|h| arena.slice(h)).collect();
    let out = kernels::eval_op(op, &data, &shapes);
    let shape = match op {
        OpCode::Dense => Shape::new(dims[0][0], dims[1][1]),
        OpCode::Concat => Shape::new(dims[0][0], dims[0][1] + dims[1][1]),
        OpCode::Argmax => Shape::new(1, 1),
        _ => args[0].shape,
    };
    Ok(arena.upload_slice(shape, &out))
}
