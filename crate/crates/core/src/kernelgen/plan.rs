//! Executable plans: a signature's op dag as a list of batched steps.
//!
//! Single-use elementwise intermediates are folded into their consumer, so
//! a chain such as `sigmoid(a + b)` runs as one pass over the elements.

use serde::Serialize;

use super::signature::{KernelSignature, SigId, SigOpKind, SigRef};
use crate::backend::Shape;
use crate::ir::OpCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Operand {
    /// One tensor for the whole batch.
    Shared(usize),
    /// One tensor per instance.
    Batched(usize),
    /// Per-instance intermediate written by an earlier step.
    Temp(usize),
}

/// Stack-machine instruction run once per element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EInstr {
    /// Pushes element `e` of the step's `n`-th argument.
    Load(usize),
    Unary(OpCode),
    Binary(OpCode),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Step {
    Dense { a: Operand, b: Operand, out: usize },
    Concat { a: Operand, b: Operand, out: usize },
    Argmax { a: Operand, out: usize },
    Elementwise { args: Vec<Operand>, code: Vec<EInstr>, out: usize },
    /// `x` times the column-wise concatenation of `ws`.
    StackedDense { x: Operand, ws: Vec<Operand>, out: usize },
    Split { src: usize, start: usize, width: usize, out: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanInput {
    pub shape: Shape,
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutablePlan {
    pub sig: SigId,
    pub name: String,
    pub inputs: Vec<PlanInput>,
    /// Per-instance shape of every temp.
    pub temps: Vec<Shape>,
    pub steps: Vec<Step>,
    pub outputs: Vec<Operand>,
}

impl ExecutablePlan {
    pub fn output_shape(&self, k: usize) -> Shape {
        match self.outputs[k] {
            Operand::Temp(t) => self.temps[t],
            Operand::Shared(i) | Operand::Batched(i) => self.inputs[i].shape,
        }
    }
}

pub fn lower_block_to_kernel(sig: &KernelSignature) -> ExecutablePlan {
    let ops = &sig.op_dag;
    let mut uses = vec![0usize; ops.len()];
    for op in ops {
        for a in &op.args {
            if let SigRef::Op(j) = a {
                uses[*j] += 1;
            }
        }
    }
    let is_output = |j: usize| sig.outputs.contains(&SigRef::Op(j));
    let elementwise = |j: usize| matches!(ops[j].kind, SigOpKind::Prim(op) if op.is_elementwise());
    // inlined[j]: op j is evaluated inside its only consumer
    let mut inlined = vec![false; ops.len()];
    for (i, op) in ops.iter().enumerate() {
        if !elementwise(i) {
            continue;
        }
        for a in &op.args {
            if let SigRef::Op(j) = a {
                if elementwise(*j) && uses[*j] == 1 && !is_output(*j) {
                    inlined[*j] = true;
                }
            }
        }
    }

    let mut temp_of: Vec<Option<usize>> = vec![None; ops.len()];
    let mut temps = Vec::new();
    let mut steps = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        if inlined[i] {
            continue;
        }
        let out = temps.len();
        temps.push(Shape::from_dims(&op.shape));
        temp_of[i] = Some(out);
        let operand = |r: &SigRef| match r {
            SigRef::Input(k) if sig.inputs[*k].shared => Operand::Shared(*k),
            SigRef::Input(k) => Operand::Batched(*k),
            SigRef::Op(j) => Operand::Temp(temp_of[*j].expect("producer has a temp")),
        };
        let step = match &op.kind {
            SigOpKind::Prim(OpCode::Dense) => Step::Dense {
                a: operand(&op.args[0]),
                b: operand(&op.args[1]),
                out,
            },
            SigOpKind::Prim(OpCode::Concat) => Step::Concat {
                a: operand(&op.args[0]),
                b: operand(&op.args[1]),
                out,
            },
            SigOpKind::Prim(OpCode::Argmax) => Step::Argmax {
                a: operand(&op.args[0]),
                out,
            },
            SigOpKind::Prim(_) => {
                let mut args = Vec::new();
                let mut code = Vec::new();
                emit(ops, &inlined, i, &mut |r| operand(r), &mut args, &mut code);
                Step::Elementwise { args, code, out }
            }
            SigOpKind::StackedDense => Step::StackedDense {
                x: operand(&op.args[0]),
                ws: op.args[1..].iter().map(operand).collect(),
                out,
            },
            SigOpKind::SplitCol { start, width } => {
                let SigRef::Op(src) = op.args[0] else {
                    unreachable!("split reads a stacked dense")
                };
                Step::Split {
                    src: temp_of[src].unwrap(),
                    start: *start,
                    width: *width,
                    out,
                }
            }
        };
        steps.push(step);
    }
    let outputs = sig
        .outputs
        .iter()
        .map(|r| match r {
            SigRef::Op(j) => Operand::Temp(temp_of[*j].unwrap()),
            SigRef::Input(k) if sig.inputs[*k].shared => Operand::Shared(*k),
            SigRef::Input(k) => Operand::Batched(*k),
        })
        .collect();
    ExecutablePlan {
        sig: sig.id,
        name: sig.name.clone(),
        inputs: sig
            .inputs
            .iter()
            .map(|i| PlanInput {
                shape: Shape::from_dims(&i.shape),
                shared: i.shared,
            })
            .collect(),
        temps,
        steps,
        outputs,
    }
}

fn emit(
    ops: &[super::signature::SigOp],
    inlined: &[bool],
    i: usize,
    operand: &mut dyn FnMut(&SigRef) -> Operand,
    args: &mut Vec<Operand>,
    code: &mut Vec<EInstr>,
) {
    let op = &ops[i];
    for a in &op.args {
        match a {
            SigRef::Op(j) if inlined[*j] => emit(ops, inlined, *j, operand, args, code),
            _ => {
                let o = operand(a);
                let n = args.iter().position(|x| *x == o).unwrap_or_else(|| {
                    args.push(o);
                    args.len() - 1
                });
                code.push(EInstr::Load(n));
            }
        }
    }
    let SigOpKind::Prim(p) = op.kind else { unreachable!() };
    code.push(if p.arity() == 1 {
        EInstr::Unary(p)
    } else {
        EInstr::Binary(p)
    });
}
