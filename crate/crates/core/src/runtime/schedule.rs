//! Batch formation for one flush window.
//!
//! Both schedulers take the window's nodes in creation order. Producers
//! outside the window have already run and impose no constraint.

use std::collections::{BTreeMap, HashMap};

use super::trace::{DfgNode, NodeId};
use super::RuntimeError;
use crate::kernelgen::SigId;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub batches: Vec<Vec<NodeId>>,
    pub ops: u64,
}

/// Buckets nodes by (phase, depth, sig) and runs the buckets in key order.
pub fn schedule_depth(nodes: &[&DfgNode]) -> Schedule {
    let mut buckets: HashMap<(u32, u32, SigId), Vec<NodeId>> = HashMap::new();
    let mut ops = 0;
    for n in nodes {
        buckets.entry((n.phase, n.depth, n.sig)).or_default().push(n.id);
        ops += 1;
    }
    let mut keys: Vec<_> = buckets.keys().copied().collect();
    keys.sort_unstable();
    ops += keys.len() as u64;
    let batches = keys.into_iter().map(|k| buckets.remove(&k).unwrap()).collect();
    Schedule { batches, ops }
}

/// Ready-set scheduling: within the lowest unfinished phase, repeatedly
/// launch every ready node of the signature with the most ready nodes.
pub fn schedule_agenda(nodes: &[&DfgNode]) -> Result<Schedule, RuntimeError> {
    let local: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut ops = 0u64;
    let mut waiting = vec![0usize; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        ops += 1;
        for p in &n.producers {
            if let Some(&j) = local.get(p) {
                waiting[i] += 1;
                consumers[j].push(i);
                ops += 1;
            }
        }
    }
    let mut remaining: BTreeMap<u32, usize> = BTreeMap::new();
    for n in nodes {
        *remaining.entry(n.phase).or_default() += 1;
    }
    // ready[phase][sig] -> local indices
    let mut ready: BTreeMap<u32, BTreeMap<SigId, Vec<usize>>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if waiting[i] == 0 {
            ready.entry(n.phase).or_default().entry(n.sig).or_default().push(i);
            ops += 1;
        }
    }
    let mut batches = Vec::new();
    while let Some((&phase, _)) = remaining.iter().find(|(_, c)| **c > 0) {
        let sigs = ready.entry(phase).or_default();
        ops += sigs.len() as u64;
        let Some((&sig, _)) = sigs
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
        else {
            return Err(RuntimeError::Internal(format!("no ready node in phase {phase}; cycle in the dataflow graph")));
        };
        let mut batch = sigs.remove(&sig).unwrap();
        batch.sort_unstable();
        *remaining.get_mut(&phase).unwrap() -= batch.len();
        for &i in &batch {
            for &c in &consumers[i] {
                ops += 1;
                waiting[c] -= 1;
                if waiting[c] == 0 {
                    let n = nodes[c];
                    ready.entry(n.phase).or_default().entry(n.sig).or_default().push(c);
                    ops += 1;
                }
            }
        }
        batches.push(batch.into_iter().map(|i| nodes[i].id).collect());
    }
    Ok(Schedule { batches, ops })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: NodeId, sig: SigId, depth: u32, producers: &[NodeId]) -> DfgNode {
        DfgNode {
            id,
            sig,
            instance: 0,
            block: Some(0),
            inputs: vec![],
            outputs: vec![],
            producers: producers.to_vec(),
            depth,
            phase: 0,
            ghost: false,
        }
    }

    #[test]
    fn depth_groups_by_key() {
        let mut ns = Vec::new();
        for i in 0..4 {
            ns.push(node(i, 1, 0, &[]));
        }
        ns.push(node(4, 2, 0, &[]));
        ns.push(node(5, 2, 0, &[]));
        ns.push(node(6, 1, 1, &[0]));
        ns.push(node(7, 1, 1, &[1]));
        let refs: Vec<&DfgNode> = ns.iter().collect();
        let s = schedule_depth(&refs);
        let sizes: Vec<usize> = s.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 2, 2]);
        assert!(schedule_depth(&[]).batches.is_empty());
    }

    #[test]
    fn agenda_diamond() {
        let ns = [node(0, 1, 0, &[]), node(1, 1, 1, &[0]), node(2, 1, 1, &[0]), node(3, 1, 2, &[1, 2])];
        let refs: Vec<&DfgNode> = ns.iter().collect();
        let s = schedule_agenda(&refs).unwrap();
        assert_eq!(s.batches, vec![vec![0], vec![1, 2], vec![3]]);
        // at least one op per node and per edge
        assert!(s.ops >= 4 + 4);
    }

    #[test]
    fn agenda_prefers_larger_ready_sets() {
        let ns = [node(0, 2, 0, &[]), node(1, 1, 0, &[]), node(2, 1, 0, &[])];
        let refs: Vec<&DfgNode> = ns.iter().collect();
        let s = schedule_agenda(&refs).unwrap();
        assert_eq!(s.batches, vec![vec![1, 2], vec![0]]);
    }

    #[test]
    fn agenda_gates_phases() {
        let mut late = node(0, 1, 0, &[]);
        late.phase = 1;
        let early = [node(1, 2, 5, &[]), node(2, 2, 5, &[])];
        let refs: Vec<&DfgNode> = vec![&late, &early[0], &early[1]];
        let s = schedule_agenda(&refs).unwrap();
        assert_eq!(s.batches, vec![vec![1, 2], vec![0]]);
    }
}
