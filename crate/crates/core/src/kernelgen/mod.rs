//! Batched kernel signatures and their executable plans.

pub mod plan;
pub mod signature;

pub use plan::{lower_block_to_kernel, ExecutablePlan};
pub use signature::{generate_kernel_signatures, KernelSignature, KernelTable, SigId, GHOST_SIG};
