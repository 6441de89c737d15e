//! Batched execution of kernel plans over arena handles.

use super::arena::{Arena, Shape, TensorHandle};
use super::kernels;
use super::{BackendError, GatherMode};
use crate::kernelgen::plan::{EInstr, ExecutablePlan, Operand, Step};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchResult {
    /// Output handles of each instance, in plan output order.
    pub outputs: Vec<Vec<TensorHandle>>,
    /// Bytes copied to make batched operands contiguous.
    pub gather_bytes: u64,
}

/// Where each instance's copy of an operand starts.
#[derive(Debug, Clone)]
struct View {
    offsets: Vec<usize>,
    len: usize,
    /// Offset of instance 0 when all instances are stored back to back.
    contiguous: Option<usize>,
}

impl View {
    fn new(offsets: Vec<usize>, len: usize) -> View {
        let contiguous = offsets
            .iter()
            .enumerate()
            .all(|(i, o)| *o == offsets[0] + i * len)
            .then_some(offsets[0]);
        View {
            offsets,
            len,
            contiguous,
        }
    }
}

fn validate(plan: &ExecutablePlan, instances: &[Vec<TensorHandle>], arena: &Arena) -> Result<(), BackendError> {
    if instances.is_empty() {
        return Err(BackendError::EmptyBatch);
    }
    for inst in instances {
        if inst.len() != plan.inputs.len() {
            return Err(BackendError::Arity {
                expected: plan.inputs.len(),
                got: inst.len(),
            });
        }
        for (k, (h, decl)) in inst.iter().zip(&plan.inputs).enumerate() {
            arena.check(h)?;
            if h.shape != decl.shape {
                return Err(BackendError::ShapeMismatch {
                    input: k,
                    expected: decl.shape,
                    got: h.shape,
                });
            }
            if decl.shared && *h != instances[0][k] {
                return Err(BackendError::SharedMismatch { input: k });
            }
        }
    }
    Ok(())
}

/// Runs one launch of `plan` for every instance. Each instance passes one
/// handle per plan input; shared inputs must be the same handle everywhere.
pub fn exec_batched(
    plan: &ExecutablePlan,
    instances: &[Vec<TensorHandle>],
    mode: GatherMode,
    arena: &mut Arena,
) -> Result<BatchResult, BackendError> {
    validate(plan, instances, arena)?;
    let b = instances.len();
    let mut gather_bytes = 0u64;
    let mut inputs = Vec::with_capacity(plan.inputs.len());
    for (k, decl) in plan.inputs.iter().enumerate() {
        let len = decl.shape.len();
        let mut view = View::new(instances.iter().map(|inst| inst[k].offset).collect(), len);
        if decl.shared {
            view.offsets.truncate(1);
        } else if mode == GatherMode::Explicit && view.contiguous.is_none() {
            let dst = arena.alloc_many(b, decl.shape);
            for (i, inst) in instances.iter().enumerate() {
                let src = arena.slice(&inst[k]).to_vec();
                arena.slice_mut(&dst.nth(i, decl.shape)).copy_from_slice(&src);
            }
            gather_bytes += (b * len * std::mem::size_of::<f32>()) as u64;
            view = View::new((0..b).map(|i| dst.offset + i * len).collect(), len);
        }
        inputs.push(view);
    }

    let base = arena.used();
    let temps: Vec<TensorHandle> = plan.temps.iter().map(|s| arena.alloc_many(b, *s)).collect();
    let temp_views: Vec<View> = temps
        .iter()
        .map(|h| View::new((0..b).map(|i| h.offset + i * h.len()).collect(), h.len()))
        .collect();
    let (lo, hi) = arena.split_at(base);
    for step in &plan.steps {
        let out = step_out(step);
        let start = temps[out].offset - base;
        let (done, rest) = hi.split_at_mut(start);
        let dst = &mut rest[..b * plan.temps[out].len()];
        let ctx = Ctx {
            lo,
            done,
            base,
            inputs: &inputs,
            temps: &temp_views,
            plan,
            b,
        };
        ctx.run(step, dst);
    }

    let outputs = (0..b)
        .map(|i| {
            plan.outputs
                .iter()
                .map(|o| match o {
                    Operand::Temp(t) => temps[*t].nth(i, plan.temps[*t]),
                    Operand::Shared(j) | Operand::Batched(j) => instances[i][*j],
                })
                .collect()
        })
        .collect();
    Ok(BatchResult { outputs, gather_bytes })
}

fn step_out(step: &Step) -> usize {
    match step {
        Step::Dense { out, .. }
        | Step::Concat { out, .. }
        | Step::Argmax { out, .. }
        | Step::Elementwise { out, .. }
        | Step::StackedDense { out, .. }
        | Step::Split { out, .. } => *out,
    }
}

struct Ctx<'a> {
    lo: &'a [f32],
    /// Temps written before the current step.
    done: &'a [f32],
    base: usize,
    inputs: &'a [View],
    temps: &'a [View],
    plan: &'a ExecutablePlan,
    b: usize,
}

impl Ctx<'_> {
    fn view(&self, o: Operand) -> &View {
        match o {
            Operand::Shared(k) | Operand::Batched(k) => &self.inputs[k],
            Operand::Temp(t) => &self.temps[t],
        }
    }

    fn shape(&self, o: Operand) -> Shape {
        match o {
            Operand::Shared(k) | Operand::Batched(k) => self.plan.inputs[k].shape,
            Operand::Temp(t) => self.plan.temps[t],
        }
    }

    fn data(&self, o: Operand, i: usize) -> &[f32] {
        let v = self.view(o);
        let off = if v.offsets.len() == 1 { v.offsets[0] } else { v.offsets[i] };
        match o {
            Operand::Temp(_) => &self.done[off - self.base..off - self.base + v.len],
            _ => &self.lo[off..off + v.len],
        }
    }

    /// All instances of `o` as one contiguous slice, when stored that way.
    fn all(&self, o: Operand) -> Option<&[f32]> {
        if matches!(o, Operand::Shared(_)) {
            return None;
        }
        let v = self.view(o);
        let start = v.contiguous?;
        let n = self.b * v.len;
        Some(match o {
            Operand::Temp(_) => &self.done[start - self.base..start - self.base + n],
            _ => &self.lo[start..start + n],
        })
    }

    fn run(&self, step: &Step, dst: &mut [f32]) {
        let b = self.b;
        match step {
            Step::Dense { a, b: w, out } => {
                let (sa, sw) = (self.shape(*a), self.shape(*w));
                let per = self.plan.temps[*out].len();
                match (self.all(*a), w) {
                    (Some(xs), Operand::Shared(_)) => {
                        kernels::dense(xs, self.data(*w, 0), b * sa.rows, sa.cols, sw.cols, dst)
                    }
                    _ => {
                        for i in 0..b {
                            let o = &mut dst[i * per..(i + 1) * per];
                            kernels::dense(self.data(*a, i), self.data(*w, i), sa.rows, sa.cols, sw.cols, o);
                        }
                    }
                }
            }
            Step::Concat { a, b: c, out } => {
                let (sa, sc) = (self.shape(*a), self.shape(*c));
                let per = self.plan.temps[*out].len();
                for i in 0..b {
                    let o = &mut dst[i * per..(i + 1) * per];
                    kernels::concat(self.data(*a, i), self.data(*c, i), sa.rows, sa.cols, sc.cols, o);
                }
            }
            Step::Argmax { a, .. } => {
                for i in 0..b {
                    dst[i] = kernels::argmax(self.data(*a, i)) as f32;
                }
            }
            Step::Elementwise { args, code, out } => {
                let per = self.plan.temps[*out].len();
                let mut stack: Vec<f32> = Vec::with_capacity(code.len());
                for i in 0..b {
                    let srcs: Vec<&[f32]> = args.iter().map(|a| self.data(*a, i)).collect();
                    let o = &mut dst[i * per..(i + 1) * per];
                    for (e, slot) in o.iter_mut().enumerate() {
                        stack.clear();
                        for ins in code {
                            match *ins {
                                EInstr::Load(n) => stack.push(srcs[n][e]),
                                EInstr::Unary(op) => {
                                    let x = stack.pop().unwrap();
                                    stack.push(kernels::unary(op, x));
                                }
                                EInstr::Binary(op) => {
                                    let y = stack.pop().unwrap();
                                    let x = stack.pop().unwrap();
                                    stack.push(kernels::binary(op, x, y));
                                }
                            }
                        }
                        *slot = stack[0];
                    }
                }
            }
            Step::StackedDense { x, ws, out } => {
                let sx = self.shape(*x);
                let widths: Vec<usize> = ws.iter().map(|w| self.shape(*w).cols).collect();
                let total: usize = widths.iter().sum();
                let stack_for = |i: usize| {
                    let mut w = vec![0.0; sx.cols * total];
                    for r in 0..sx.cols {
                        let mut c0 = 0;
                        for (wk, n) in ws.iter().zip(&widths) {
                            let src = &self.data(*wk, i)[r * n..(r + 1) * n];
                            w[r * total + c0..r * total + c0 + n].copy_from_slice(src);
                            c0 += n;
                        }
                    }
                    w
                };
                let per = self.plan.temps[*out].len();
                let all_shared = ws.iter().all(|w| matches!(w, Operand::Shared(_)));
                match self.all(*x) {
                    Some(xs) if all_shared => {
                        kernels::dense(xs, &stack_for(0), b * sx.rows, sx.cols, total, dst);
                    }
                    _ => {
                        let shared_w = all_shared.then(|| stack_for(0));
                        for i in 0..b {
                            let owned;
                            let w = match &shared_w {
                                Some(w) => w,
                                None => {
                                    owned = stack_for(i);
                                    &owned
                                }
                            };
                            let o = &mut dst[i * per..(i + 1) * per];
                            kernels::dense(self.data(*x, i), w, sx.rows, sx.cols, total, o);
                        }
                    }
                }
            }
            Step::Split { src, start, width, out } => {
                let s = self.plan.temps[*src];
                let per = self.plan.temps[*out].len();
                for i in 0..b {
                    let from = self.data(Operand::Temp(*src), i);
                    let o = &mut dst[i * per..(i + 1) * per];
                    for r in 0..s.rows {
                        o[r * width..(r + 1) * width].copy_from_slice(&from[r * s.cols + start..r * s.cols + start + width]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::coarsen::{coarsen, CoarsenOptions};
    use crate::analysis::taint::analyze_reuse;
    use crate::ir::*;
    use crate::kernelgen::signature::{KernelSignature, SigOpKind, SigRef};
    use crate::kernelgen::{generate_kernel_signatures, lower_block_to_kernel};
    use crate::zoo::{Model, Size};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Op-by-op evaluation of one instance straight from the signature.
    fn oracle(sig: &KernelSignature, inputs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let mut vals: Vec<(Vec<f32>, Vec<usize>)> = Vec::new();
        for op in &sig.op_dag {
            let args: Vec<(Vec<f32>, Vec<usize>)> = op
                .args
                .iter()
                .map(|r| match r {
                    SigRef::Input(k) => (inputs[*k].clone(), sig.inputs[*k].shape.clone()),
                    SigRef::Op(j) => vals[*j].clone(),
                })
                .collect();
            let v = match &op.kind {
                SigOpKind::Prim(p) => {
                    let d: Vec<&[f32]> = args.iter().map(|a| a.0.as_slice()).collect();
                    let s: Vec<&[usize]> = args.iter().map(|a| a.1.as_slice()).collect();
                    kernels::eval_op(*p, &d, &s)
                }
                // separate denses, concatenated by column
                SigOpKind::StackedDense => {
                    let (x, sx) = &args[0];
                    let parts: Vec<Vec<f32>> = args[1..]
                        .iter()
                        .map(|(w, sw)| kernels::eval_op(OpCode::Dense, &[x, w], &[sx, sw]))
                        .collect();
                    let mut out = Vec::new();
                    for r in 0..sx[0] {
                        for (p, (_, sw)) in parts.iter().zip(&args[1..]) {
                            out.extend_from_slice(&p[r * sw[1]..(r + 1) * sw[1]]);
                        }
                    }
                    out
                }
                SigOpKind::SplitCol { start, width } => {
                    let (src, ss) = &args[0];
                    (0..ss[0])
                        .flat_map(|r| src[r * ss[1] + start..r * ss[1] + start + width].to_vec())
                        .collect()
                }
            };
            vals.push((v, op.shape.clone()));
        }
        sig.outputs
            .iter()
            .map(|r| match r {
                SigRef::Op(j) => vals[*j].0.clone(),
                SigRef::Input(k) => inputs[*k].clone(),
            })
            .collect()
    }

    fn check_model(model: Model, b: usize) {
        let t = infer_types(&model.program(Size::Small)).unwrap();
        let c = coarsen(&t, &analyze_reuse(&t.program), CoarsenOptions::default());
        let table = generate_kernel_signatures(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sig in &table.sigs[1..] {
            let plan = lower_block_to_kernel(sig);
            let host: Vec<Vec<Vec<f32>>> = (0..b)
                .map(|_| {
                    sig.inputs
                        .iter()
                        .map(|i| (0..i.shape.iter().product::<usize>()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect()
                })
                .collect();
            let mut results = Vec::new();
            for mode in [GatherMode::Fused, GatherMode::Explicit] {
                let mut arena = Arena::new(0);
                let mut shared = Vec::new();
                for (k, i) in plan.inputs.iter().enumerate() {
                    shared.push(i.shared.then(|| arena.upload_slice(i.shape, &host[0][k])));
                }
                // interleave instances so batched operands are scattered
                let mut handles: Vec<Vec<TensorHandle>> = vec![Vec::new(); b];
                for (k, i) in plan.inputs.iter().enumerate() {
                    for (n, inst) in handles.iter_mut().enumerate() {
                        inst.push(match shared[k] {
                            Some(h) => h,
                            None => {
                                arena.alloc(Shape::new(1, 1));
                                arena.upload_slice(i.shape, &host[n][k])
                            }
                        });
                    }
                }
                let r = exec_batched(&plan, &handles, mode, &mut arena).unwrap();
                let has_batched = plan.inputs.iter().any(|i| !i.shared);
                match mode {
                    GatherMode::Fused => assert_eq!(r.gather_bytes, 0),
                    GatherMode::Explicit => assert_eq!(r.gather_bytes > 0, has_batched && b > 1),
                }
                let outs: Vec<Vec<Vec<f32>>> = r
                    .outputs
                    .iter()
                    .map(|hs| hs.iter().map(|h| arena.slice(h).to_vec()).collect())
                    .collect();
                results.push(outs);
            }
            assert_eq!(results[0], results[1], "{model} {}", sig.name);
            for n in 0..b {
                let mut shared_host = host[n].clone();
                for (k, i) in sig.inputs.iter().enumerate() {
                    if i.shared {
                        shared_host[k] = host[0][k].clone();
                    }
                }
                let want = oracle(sig, &shared_host);
                let got = &results[0][n];
                let bits = |v: &Vec<Vec<f32>>| v.iter().map(|x| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
                assert_eq!(bits(got), bits(&want), "{model} {} instance {n}", sig.name);
            }
        }
    }

    #[test]
    fn batched_plans_match_op_by_op_evaluation() {
        for m in Model::ZOO.into_iter().chain([Model::Branchy]) {
            check_model(m, 5);
            check_model(m, 1);
        }
    }

    #[test]
    fn shared_handle_mismatch_is_an_error() {
        let t = infer_types(&Model::Rnn.program(Size::Small)).unwrap();
        let c = coarsen(&t, &analyze_reuse(&t.program), CoarsenOptions::default());
        let table = generate_kernel_signatures(&c);
        let sig = table.sigs.iter().find(|s| s.name == "sigmoid_add_dense").unwrap();
        let plan = lower_block_to_kernel(sig);
        let mut arena = Arena::new(0);
        let insts: Vec<Vec<TensorHandle>> = (0..2)
            .map(|_| plan.inputs.iter().map(|i| arena.alloc(i.shape)).collect())
            .collect();
        let err = exec_batched(&plan, &insts, GatherMode::Fused, &mut arena).unwrap_err();
        assert!(matches!(err, BackendError::SharedMismatch { .. }));
    }

    #[test]
    fn primop_matches_host_kernel() {
        let mut arena = Arena::new(0);
        let a = arena.upload_slice(Shape::new(1, 2), &[1.0, 2.0]);
        let w = arena.upload_slice(Shape::new(2, 3), &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        let h = super::super::exec_primop(OpCode::Dense, &[a, w], &mut arena).unwrap();
        assert_eq!(h.shape, Shape::new(1, 3));
        assert_eq!(arena.slice(&h), [1.0, 2.0, 4.0]);
        let m = super::super::exec_primop(OpCode::Argmax, &[h], &mut arena).unwrap();
        assert_eq!(arena.slice(&m), [2.0]);
    }
}
