//! Invocation counts per kernel signature, measured on sample inputs, next
//! to a static estimate from how deeply each block is nested in loops.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::lower::{FuncId, Lowered, Stmt};
use super::Compiled;
use crate::data::{Datum, HostTensor};
use crate::kernelgen::SigId;
use crate::runtime::{evaluate_batch, ExecOptions, RuntimeError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProfileEntry {
    pub sig: SigId,
    pub name: String,
    /// Nodes of this signature over the whole sample.
    pub count: u64,
    /// Loop nesting level: recursive functions entered from outside their
    /// own cycle and map bodies each add one.
    pub nesting: u32,
    /// 1-based rank by measured count.
    pub rank: usize,
    /// 1-based rank by nesting level.
    pub static_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProfileReport {
    pub instances: usize,
    /// Sorted by descending count, then signature id.
    pub entries: Vec<ProfileEntry>,
}

impl ProfileReport {
    pub fn count_of(&self, name: &str) -> u64 {
        self.entries.iter().filter(|e| e.name == name).map(|e| e.count).sum()
    }
}

fn callees(lowered: &Lowered, f: FuncId) -> BTreeSet<FuncId> {
    let mut out = BTreeSet::new();
    let mut stack = vec![lowered.funcs[f].body];
    let mut seen = BTreeSet::new();
    while let Some(b) = stack.pop() {
        if !seen.insert(b) {
            continue;
        }
        for s in &lowered.bodies[b].stmts {
            match s {
                Stmt::Call { func, .. } => {
                    out.insert(*func);
                }
                Stmt::ParCall { calls } => out.extend(calls.iter().map(|c| c.1)),
                Stmt::Map { body, .. } => stack.push(*body),
                Stmt::Match { arms, .. } => stack.extend(arms.iter().map(|a| a.body)),
                Stmt::If {
                    then_body, else_body, ..
                } => stack.extend([*then_body, *else_body]),
                _ => {}
            }
        }
    }
    out
}

/// Nesting level of every block reachable from the entry function.
pub fn block_nesting(lowered: &Lowered) -> BTreeMap<usize, u32> {
    let n = lowered.funcs.len();
    let direct: Vec<BTreeSet<FuncId>> = (0..n).map(|f| callees(lowered, f)).collect();
    // reach[f] holds every function reachable from f in one or more calls
    let mut reach = direct.clone();
    loop {
        let mut changed = false;
        for f in 0..n {
            let extra: BTreeSet<FuncId> = reach[f].iter().flat_map(|g| reach[*g].iter().copied()).collect();
            let before = reach[f].len();
            reach[f].extend(extra);
            changed |= reach[f].len() != before;
        }
        if !changed {
            break;
        }
    }
    let same_cycle = |f: FuncId, g: FuncId| reach[f].contains(&g) && reach[g].contains(&f);

    let mut out: BTreeMap<usize, u32> = BTreeMap::new();
    let mut best: Vec<Option<u32>> = vec![None; n];
    let cap = n as u32 + 8;
    let mut work = vec![(lowered.entry, 0u32)];
    while let Some((f, level)) = work.pop() {
        if best[f].is_some_and(|b| b >= level) || level > cap {
            continue;
        }
        best[f] = Some(level);
        let mut bodies = vec![(lowered.funcs[f].body, level)];
        while let Some((b, lv)) = bodies.pop() {
            for s in &lowered.bodies[b].stmts {
                let mut call = |g: FuncId| {
                    let enter = lowered.funcs[g].recursive && !same_cycle(f, g);
                    work.push((g, lv + enter as u32));
                };
                match s {
                    Stmt::Invoke { block, .. } => {
                        let e = out.entry(*block).or_insert(lv);
                        *e = (*e).max(lv);
                    }
                    Stmt::Call { func, .. } => call(*func),
                    Stmt::ParCall { calls } => calls.iter().for_each(|c| call(c.1)),
                    Stmt::Map { body, .. } => bodies.push((*body, lv + 1)),
                    Stmt::Match { arms, .. } => bodies.extend(arms.iter().map(|a| (a.body, lv))),
                    Stmt::If {
                        then_body, else_body, ..
                    } => bodies.extend([(*then_body, lv), (*else_body, lv)]),
                    _ => {}
                }
            }
        }
    }
    out
}

/// Runs the sample through the batched runtime and counts block
/// invocations per signature.
pub fn profile_invocations(
    compiled: &Compiled,
    weights: &[(String, HostTensor)],
    sample_inputs: &[Vec<Datum>],
    opts: ExecOptions,
) -> Result<ProfileReport, RuntimeError> {
    let (_, trace) = evaluate_batch(compiled, weights, sample_inputs, opts)?;
    let mut counts: BTreeMap<SigId, u64> = BTreeMap::new();
    for n in trace.nodes.iter().filter(|n| !n.ghost) {
        *counts.entry(n.sig).or_default() += 1;
    }
    let nesting_by_block = block_nesting(&compiled.lowered);
    let mut nesting: BTreeMap<SigId, u32> = BTreeMap::new();
    for (b, lv) in nesting_by_block {
        let e = nesting.entry(compiled.kernels.block_sig[b]).or_default();
        *e = (*e).max(lv);
    }
    let mut entries: Vec<ProfileEntry> = compiled.kernels.sigs[1..]
        .iter()
        .filter(|s| counts.contains_key(&s.id) || nesting.contains_key(&s.id))
        .map(|s| ProfileEntry {
            sig: s.id,
            name: s.name.clone(),
            count: counts.get(&s.id).copied().unwrap_or(0),
            nesting: nesting.get(&s.id).copied().unwrap_or(0),
            rank: 0,
            static_rank: 0,
        })
        .collect();
    let mut by_nesting: Vec<(u32, SigId)> = entries.iter().map(|e| (e.nesting, e.sig)).collect();
    by_nesting.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    entries.sort_by(|a, b| b.count.cmp(&a.count).then(a.sig.cmp(&b.sig)));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
        e.static_rank = by_nesting.iter().position(|x| x.1 == e.sig).unwrap() + 1;
    }
    Ok(ProfileReport {
        instances: sample_inputs.len(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{compile, Toggles};
    use crate::zoo::{self, InputShape, Model, Size};

    fn profile(m: Model, batch: usize, shape: InputShape) -> (ProfileReport, Vec<Vec<Datum>>) {
        let p = m.program(Size::Small);
        let c = compile(&p, Toggles::default()).unwrap();
        let w = zoo::weights(&p, 1);
        let inputs = zoo::inputs(m, &p, batch, 3, shape);
        (profile_invocations(&c, &w, &inputs, ExecOptions::default()).unwrap(), inputs)
    }

    #[test]
    fn treelstm_recurrent_count_is_node_total() {
        let shape = InputShape {
            tree_nodes: Some(15),
            ..Default::default()
        };
        let (r, inputs) = profile(Model::Treelstm, 5, shape);
        let nodes: usize = inputs.iter().map(|i| i[0].tree_size()).sum();
        assert_eq!(nodes, 75);
        // leaves and internal nodes share the recurrent cell
        assert_eq!(r.entries[0].count, 75);
        assert_eq!(r.entries.last().unwrap().count, 5);
    }

    #[test]
    fn nested_inner_block_ranks_first() {
        let (r, inputs) = profile(Model::Nestedrnn, 4, InputShape::default());
        let top = &r.entries[0];
        assert_eq!(top.rank, 1);
        assert_eq!(top.static_rank, 1);
        assert_eq!(top.nesting, 2);
        // inner steps per outer token average the midpoint of the sampled range
        let outer: u64 = inputs.iter().map(|i| i[0].as_list().unwrap().len() as u64).sum();
        let ratio = top.count as f64 / outer as f64;
        assert!((20.0..=40.0).contains(&ratio), "{ratio}");
    }
}
