//! Batched kernel signatures.
//!
//! Blocks with the same op structure, operand shapes and reuse classes get
//! the same signature, so their invocations can be batched together no
//! matter which function or instance they come from.

use std::collections::HashMap;

use serde::Serialize;

use crate::analysis::coarsen::{BlockArg, Coarsening, InputAtom, StaticBlock};
use crate::analysis::taint::Class;
use crate::ir::OpCode;

pub type SigId = usize;

/// Signature id reserved for ghost units.
pub const GHOST_SIG: SigId = 0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum SigRef {
    Input(usize),
    Op(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum SigOpKind {
    Prim(OpCode),
    /// One dense against column-stacked weights: args are `x, w1 .. wk`.
    StackedDense,
    /// Columns `start .. start + width` of a stacked dense result.
    SplitCol { start: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SigOp {
    pub kind: SigOpKind,
    pub args: Vec<SigRef>,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SigInput {
    pub name: String,
    pub shape: Vec<usize>,
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KernelSignature {
    pub id: SigId,
    pub name: String,
    /// Ops in execution order.
    pub op_dag: Vec<SigOp>,
    /// Every operand, in the order invocations pass them.
    pub inputs: Vec<SigInput>,
    pub outputs: Vec<SigRef>,
    pub ghost: bool,
}

impl KernelSignature {
    pub fn ghost() -> KernelSignature {
        KernelSignature {
            id: GHOST_SIG,
            name: "ghost".into(),
            op_dag: vec![],
            inputs: vec![],
            outputs: vec![],
            ghost: true,
        }
    }

    pub fn shared_params(&self) -> Vec<(&str, &[usize])> {
        self.inputs
            .iter()
            .filter(|i| i.shared)
            .map(|i| (i.name.as_str(), i.shape.as_slice()))
            .collect()
    }

    pub fn batched_params(&self) -> Vec<(&str, &[usize])> {
        self.inputs
            .iter()
            .filter(|i| !i.shared)
            .map(|i| (i.name.as_str(), i.shape.as_slice()))
            .collect()
    }

    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        self.outputs
            .iter()
            .map(|r| match r {
                SigRef::Op(i) => self.op_dag[*i].shape.clone(),
                SigRef::Input(i) => self.inputs[*i].shape.clone(),
            })
            .collect()
    }
}

/// Structural identity of a signature: ops, shapes and reuse classes, with
/// names erased. Shared operands keep the identity of the tensor they read,
/// since one launch passes a single copy of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct SigKey {
    ops: Vec<SigOp>,
    inputs: Vec<(Vec<usize>, Class)>,
    outputs: Vec<SigRef>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelTable {
    /// Index 0 is the ghost signature.
    pub sigs: Vec<KernelSignature>,
    /// Signature of each block.
    pub block_sig: Vec<SigId>,
}

impl KernelTable {
    pub fn sig_of_block(&self, block: usize) -> &KernelSignature {
        &self.sigs[self.block_sig[block]]
    }
}

fn op_dag(block: &StaticBlock) -> (Vec<SigOp>, Vec<SigRef>) {
    let mut ops: Vec<SigOp> = Vec::new();
    let mut at: Vec<Option<usize>> = vec![None; block.ops.len()];
    let map_arg = |a: &BlockArg, at: &[Option<usize>]| match a {
        BlockArg::Input(i) => SigRef::Input(*i),
        BlockArg::Op(j) => SigRef::Op(at[*j].expect("producer precedes consumer")),
    };
    for (i, op) in block.ops.iter().enumerate() {
        if at[i].is_some() {
            continue;
        }
        if let Some(stack) = block.stacks.iter().find(|s| s[0] == i) {
            let x = map_arg(&op.args[0], &at);
            let mut args = vec![x];
            let mut width = 0;
            for m in stack {
                args.push(map_arg(&block.ops[*m].args[1], &at));
                width += block.ops[*m].shape[1];
            }
            let rows = op.shape[0];
            ops.push(SigOp {
                kind: SigOpKind::StackedDense,
                args,
                shape: vec![rows, width],
            });
            let src = ops.len() - 1;
            let mut start = 0;
            for m in stack {
                let w = block.ops[*m].shape[1];
                ops.push(SigOp {
                    kind: SigOpKind::SplitCol { start, width: w },
                    args: vec![SigRef::Op(src)],
                    shape: block.ops[*m].shape.clone(),
                });
                at[*m] = Some(ops.len() - 1);
                start += w;
            }
            continue;
        }
        let args = op.args.iter().map(|a| map_arg(a, &at)).collect();
        ops.push(SigOp {
            kind: SigOpKind::Prim(op.op),
            args,
            shape: op.shape.clone(),
        });
        at[i] = Some(ops.len() - 1);
    }
    let outputs = block.outputs.iter().map(|o| SigRef::Op(at[*o].unwrap())).collect();
    (ops, outputs)
}

fn kind_name(k: &SigOpKind) -> &'static str {
    match k {
        SigOpKind::Prim(op) => op.name(),
        SigOpKind::StackedDense => "hdense",
        SigOpKind::SplitCol { .. } => "split",
    }
}

/// Op names from the last op back to the first, runs collapsed with a count.
fn sig_name(ops: &[SigOp]) -> String {
    let mut parts: Vec<(&str, usize)> = Vec::new();
    for op in ops.iter().rev() {
        let n = kind_name(&op.kind);
        match parts.last_mut() {
            Some((m, c)) if *m == n => *c += 1,
            _ => parts.push((n, 1)),
        }
    }
    parts
        .into_iter()
        .map(|(n, c)| if c == 1 { n.to_string() } else { format!("{n}{c}") })
        .collect::<Vec<_>>()
        .join("_")
}

fn input_name(atom: &InputAtom) -> String {
    match atom {
        InputAtom::Var(v) => v.clone(),
        InputAtom::Const(k) => format!("const{:?}", k.shape),
    }
}

pub fn generate_kernel_signatures(coarsening: &Coarsening) -> KernelTable {
    let mut sigs = vec![KernelSignature::ghost()];
    let mut by_key: HashMap<SigKey, SigId> = HashMap::new();
    let mut block_sig = Vec::with_capacity(coarsening.blocks.len());
    for block in &coarsening.blocks {
        let (ops, outputs) = op_dag(block);
        let key = SigKey {
            ops: ops.clone(),
            inputs: block.inputs.iter().map(|i| (i.shape.clone(), i.class.clone())).collect(),
            outputs: outputs.clone(),
        };
        let id = *by_key.entry(key).or_insert_with(|| {
            let id = sigs.len();
            sigs.push(KernelSignature {
                id,
                name: sig_name(&ops),
                inputs: block
                    .inputs
                    .iter()
                    .map(|i| SigInput {
                        name: match &i.class {
                            Class::Shared(s) => s.to_string(),
                            Class::Batched => input_name(&i.atom),
                        },
                        shape: i.shape.clone(),
                        shared: i.class.is_shared(),
                    })
                    .collect(),
                op_dag: ops,
                outputs,
                ghost: false,
            });
            id
        });
        block_sig.push(id);
    }
    KernelTable { sigs, block_sig }
}
