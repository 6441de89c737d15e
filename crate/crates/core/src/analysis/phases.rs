//! Phase assignment for the top-level stages of the entry function.
//!
//! Without explicit markers, every stage that (transitively) runs a prim-op
//! opens a new phase; stages without prim-ops join the phase of the next
//! stage that has some.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::coarsen::Coarsening;
use crate::ir::annotations::explicit_phases;
use crate::ir::*;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PhaseMap {
    /// Phase of each top-level stage of the entry function.
    pub stage_phase: Vec<u32>,
    /// Phases in which each block may run.
    pub blocks: BTreeMap<usize, BTreeSet<u32>>,
    pub count: u32,
    /// True when the numbering came from markers in the source.
    pub explicit: bool,
}

impl PhaseMap {
    pub fn phase_of_stage(&self, stage: usize) -> u32 {
        self.stage_phase.get(stage).copied().unwrap_or(0)
    }
}

fn callees(e: &Expr) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    e.walk(&mut |x| {
        if let Expr::Call { callee, .. } = x {
            out.insert(callee.as_str());
        }
    });
    out
}

fn has_op(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |x| found |= matches!(x, Expr::PrimOp { .. }));
    found
}

/// Functions reachable from `roots` through calls, roots included.
pub(crate) fn reachable<'a>(program: &'a Program, roots: impl IntoIterator<Item = &'a str>) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<&str> = roots.into_iter().collect();
    while let Some(f) = stack.pop() {
        if seen.insert(f) {
            if let Some(def) = program.functions.get(f) {
                stack.extend(callees(&def.body));
            }
        }
    }
    seen
}

/// Top-level lets of the entry function with their stage indices.
fn top_lets<'a>(main: &'a FuncDef, stages: &BTreeMap<String, usize>) -> Vec<(usize, &'a Expr)> {
    let mut out = Vec::new();
    let mut e = &main.body;
    while let Expr::Let { name, bound, body, .. } = e {
        if let Some(s) = stages.get(name) {
            out.push((*s, &**bound));
        }
        e = body;
    }
    out
}

pub fn assign_phases(typed: &TypedProgram, coarsening: &Coarsening, enabled: bool) -> Result<PhaseMap, IrError> {
    let program = &typed.program;
    let main = program.entry_fn();
    let lets = top_lets(main, &typed.main_stages);
    let n = typed.stage_count;
    let markers = explicit_phases(typed.source.entry_fn())?;
    let mut out = PhaseMap {
        stage_phase: vec![0; n],
        explicit: enabled && !markers.is_empty(),
        ..Default::default()
    };
    if enabled && !markers.is_empty() {
        let mut cur = 0;
        for s in 0..n {
            if let Some(b) = markers.iter().find(|b| b.stage == s) {
                cur = b.phase;
            }
            out.stage_phase[s] = cur;
        }
    } else if enabled {
        let with_ops: BTreeSet<&str> = program
            .functions
            .values()
            .filter(|f| reachable(program, [f.name.as_str()]).iter().any(|g| has_op(&program.functions[*g].body)))
            .map(|f| f.name.as_str())
            .collect();
        let mut prim = vec![false; n];
        for (s, bound) in &lets {
            prim[*s] |= has_op(bound) || callees(bound).iter().any(|c| with_ops.contains(c));
        }
        let mut next = 0u32;
        let mut pending = Vec::new();
        for s in 0..n {
            pending.push(s);
            if prim[s] {
                for p in pending.drain(..) {
                    out.stage_phase[p] = next;
                }
                next += 1;
            }
        }
        let last = next.saturating_sub(1);
        for p in pending {
            out.stage_phase[p] = last;
        }
    }
    out.count = out.stage_phase.iter().copied().max().map_or(1, |m| m + 1);

    // phases reached by each function, then by each block
    let mut fn_phases: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
    let mut site_phase: BTreeMap<SiteId, u32> = BTreeMap::new();
    for (s, bound) in &lets {
        let p = out.phase_of_stage(*s);
        for f in reachable(program, callees(bound)) {
            fn_phases.entry(f).or_default().insert(p);
        }
        bound.walk(&mut |x| {
            if let Expr::PrimOp { site, .. } = x {
                site_phase.insert(*site, p);
            }
        });
    }
    for b in &coarsening.blocks {
        let phases = if b.func == program.entry {
            b.ops
                .iter()
                .map(|o| site_phase.get(&o.site).copied().unwrap_or(out.count - 1))
                .collect()
        } else {
            fn_phases.get(b.func.as_str()).cloned().unwrap_or_default()
        };
        out.blocks.insert(b.id, phases);
    }
    Ok(out)
}
