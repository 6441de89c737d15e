//! Hybrid static and dynamic auto-batching for dynamic dataflow programs.

pub mod analysis;
pub mod backend;
pub mod data;
pub mod ir;
pub mod kernelgen;
pub mod runtime;
pub mod zoo;

pub use analysis::{compile, AnalysisReport, compile_typed, profile_invocations, Compiled, ProfileReport, Toggles};
pub use backend::{Arena, GatherMode, Shape, TensorHandle};
pub use data::{Datum, HostTensor};
pub use ir::{parse_program, print_program, Program};
pub use kernelgen::{ExecutablePlan, KernelSignature, KernelTable, SigId};
pub use runtime::{
    evaluate_batch, interpret_reference, run_batch, Counters, ExecOptions, RuntimeError, ScheduleTrace, Scheduler,
};
pub use zoo::{InputShape, Model, Size};
