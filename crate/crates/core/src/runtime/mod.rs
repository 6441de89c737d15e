//! Lazy batched execution: fibers, dataflow graph construction, scheduling
//! and the unbatched reference interpreter.

mod machine;
pub mod reference;
pub mod schedule;
pub mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use reference::interpret_reference;
pub use schedule::{schedule_agenda, schedule_depth, Schedule};
pub use trace::{BatchRecord, Counters, DfgNode, ScheduleTrace};

use crate::analysis::{compile, Compiled, Toggles};
use crate::backend::{BackendError, GatherMode};
use crate::data::{Datum, HostTensor};
use crate::ir::{IrError, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    /// Buckets by (phase, depth, signature).
    #[default]
    Depth,
    /// Ready-set baseline.
    Agenda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ExecOptions {
    pub scheduler: Scheduler,
    pub gather: GatherMode,
    #[serde(flatten)]
    pub toggles: Toggles,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("runtime type error: {0}")]
    Type(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("every fiber is blocked and nothing is pending")]
    Deadlock,
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Runs a mini-batch through the compiled program. `weights` are matched to
/// weight parameters by name; each instance lists its input values in
/// declaration order. The scheduler and gather mode come from `opts`; the
/// compile-time toggles were fixed when `compiled` was built.
pub fn evaluate_batch(
    compiled: &Compiled,
    weights: &[(String, HostTensor)],
    inputs: &[Vec<Datum>],
    opts: ExecOptions,
) -> Result<(Vec<Datum>, ScheduleTrace), RuntimeError> {
    machine::Machine::new(compiled, opts).run(weights, inputs)
}

/// Compiles `program` with `opts.toggles` and evaluates the batch.
pub fn run_batch(
    program: &Program,
    weights: &[(String, HostTensor)],
    inputs: &[Vec<Datum>],
    opts: ExecOptions,
) -> Result<(Vec<Datum>, ScheduleTrace), RuntimeError> {
    let compiled = compile(program, opts.toggles)?;
    evaluate_batch(&compiled, weights, inputs, opts)
}
