//! The full static pipeline from a parsed program to runtime artifacts.

use serde::{Deserialize, Serialize};

use super::coarsen::{coarsen, CoarsenOptions, Coarsening};
use super::duplicate::{duplicate, DuplicationReport};
use super::layout::group_concurrent_calls;
use super::lower::{lower, GhostPlan, LowerOptions, Lowered};
use super::phases::{assign_phases, PhaseMap};
use super::taint::{analyze_reuse, ReuseReport};
use crate::ir::*;
use crate::kernelgen::{generate_kernel_signatures, lower_block_to_kernel, ExecutablePlan, KernelTable};

/// Compile-time switches; everything is on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub coarsen: bool,
    pub ghost: bool,
    pub phases: bool,
    pub hoist: bool,
    pub horizontal_fuse: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            coarsen: true,
            ghost: true,
            phases: true,
            hoist: true,
            horizontal_fuse: true,
        }
    }
}

impl Toggles {
    pub fn all_off() -> Toggles {
        Toggles {
            coarsen: false,
            ghost: false,
            phases: false,
            hoist: false,
            horizontal_fuse: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub toggles: Toggles,
    /// The program after duplication and call grouping.
    pub typed: TypedProgram,
    pub duplication: DuplicationReport,
    pub reuse: ReuseReport,
    pub coarsening: Coarsening,
    pub phases: PhaseMap,
    pub lowered: Lowered,
    pub ghosts: GhostPlan,
    pub kernels: KernelTable,
    /// One plan per signature; the ghost entry is never executed.
    pub plans: Vec<ExecutablePlan>,
}

pub fn compile(program: &Program, toggles: Toggles) -> Result<Compiled, IrError> {
    let typed = infer_types(program)?;
    validate_annotations(&typed)?;
    compile_typed(&typed, toggles)
}

pub fn compile_typed(typed: &TypedProgram, toggles: Toggles) -> Result<Compiled, IrError> {
    let (dup_typed, _, duplication) = duplicate(typed)?;
    let typed = dup_typed.retype(group_concurrent_calls(&dup_typed.program))?;
    let reuse = analyze_reuse(&typed.program);
    let coarsening = coarsen(
        &typed,
        &reuse,
        CoarsenOptions {
            coarsen: toggles.coarsen,
            hfuse: toggles.horizontal_fuse,
            hoist: toggles.hoist,
        },
    );
    let phases = assign_phases(&typed, &coarsening, toggles.phases)?;
    let (lowered, ghosts) = lower(
        &typed,
        &coarsening,
        &phases,
        LowerOptions {
            ghosts: toggles.ghost,
            phases: toggles.phases,
        },
    );
    let kernels = generate_kernel_signatures(&coarsening);
    let plans = kernels.sigs.iter().map(lower_block_to_kernel).collect();
    Ok(Compiled {
        toggles,
        typed,
        duplication,
        reuse,
        coarsening,
        phases,
        lowered,
        ghosts,
        kernels,
        plans,
    })
}
