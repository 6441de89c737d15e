//! Dataflow nodes and the record of how they were batched.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::kernelgen::SigId;

pub type NodeId = usize;
pub type TensorId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DfgNode {
    pub id: NodeId,
    pub sig: SigId,
    pub instance: usize,
    /// Block the node invokes; `None` for ghosts.
    pub block: Option<usize>,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    /// Nodes that were still pending when this one was created and produce
    /// one of its inputs.
    pub producers: Vec<NodeId>,
    pub depth: u32,
    pub phase: u32,
    pub ghost: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchRecord {
    pub phase: u32,
    pub depth: u32,
    pub sig: SigId,
    pub size: usize,
    pub ghost: bool,
    /// Index of the flush that ran the batch.
    #[serde(skip)]
    pub flush: usize,
    #[serde(skip)]
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counters {
    pub kernel_launches: u64,
    pub total_nodes: u64,
    pub scheduler_ops: u64,
    pub sync_points: u64,
    pub gather_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ScheduleTrace {
    pub batches: Vec<BatchRecord>,
    pub counters: Counters,
    #[serde(skip)]
    pub nodes: Vec<DfgNode>,
    #[serde(skip)]
    pub edges: u64,
}

impl ScheduleTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Non-ghost launches of signature `sig`.
    pub fn launches_of(&self, sig: SigId) -> usize {
        self.batches.iter().filter(|b| !b.ghost && b.sig == sig).count()
    }

    /// Batch index of every node.
    fn batch_of(&self) -> HashMap<NodeId, usize> {
        let mut out = HashMap::new();
        for (i, b) in self.batches.iter().enumerate() {
            for n in &b.nodes {
                out.insert(*n, i);
            }
        }
        out
    }

    /// Every node runs exactly once and after all of its producers.
    pub fn check_dependencies(&self) -> Result<(), String> {
        let at = self.batch_of();
        let count: usize = self.batches.iter().map(|b| b.nodes.len()).sum();
        if count != self.nodes.len() || at.len() != self.nodes.len() {
            return Err(format!("{} nodes but {count} scheduled", self.nodes.len()));
        }
        for n in &self.nodes {
            for p in &n.producers {
                if at[p] >= at[&n.id] {
                    return Err(format!("node {} runs no later than its consumer {}", p, n.id));
                }
            }
        }
        Ok(())
    }

    /// Nodes sharing (phase, depth, sig) in one flush share one batch.
    pub fn check_depth_coresidency(&self) -> Result<(), String> {
        let at = self.batch_of();
        let mut seen: BTreeMap<(usize, u32, u32, SigId), usize> = BTreeMap::new();
        for n in &self.nodes {
            let b = at[&n.id];
            let key = (self.batches[b].flush, n.phase, n.depth, n.sig);
            if let Some(prev) = seen.insert(key, b) {
                if prev != b {
                    return Err(format!("key {key:?} split over batches {prev} and {b}"));
                }
            }
        }
        Ok(())
    }

    /// Within a flush, no batch of phase p precedes a batch of a lower phase.
    pub fn check_phase_order(&self) -> Result<(), String> {
        for w in self.batches.windows(2) {
            if w[0].flush == w[1].flush && w[0].phase > w[1].phase {
                return Err(format!("phase {} batch before phase {} batch", w[0].phase, w[1].phase));
            }
        }
        Ok(())
    }

    /// Batch sizes keyed by (phase, depth, sig).
    pub fn histogram(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for b in &self.batches {
            out.entry(format!("{}/{}/{}", b.phase, b.depth, b.sig)).or_default().push(b.size);
        }
        out
    }
}
