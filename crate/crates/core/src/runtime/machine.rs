//! Lazy per-instance execution on cooperatively scheduled fibers.
//!
//! Every instance runs on its own fiber. Block invocations do not compute
//! anything; they append a node to the pending dataflow graph and hand out
//! placeholder tensors. A fiber that needs a concrete value blocks, and once
//! no fiber can make progress the pending graph is flushed.

use std::rc::Rc;

use super::reference::{scalar_binary, ScalarVal};
use super::schedule::{schedule_agenda, schedule_depth};
use super::trace::{BatchRecord, DfgNode, NodeId, ScheduleTrace, TensorId};
use super::{ExecOptions, RuntimeError, Scheduler};
use crate::analysis::hoist::HoistClass;
use crate::analysis::lower::{BodyId, FuncId, LAtom, Rhs, Slot, Stmt};
use crate::analysis::Compiled;
use crate::backend::{exec_batched, Arena, TensorHandle};
use crate::data::{Datum, HostTensor};
use crate::ir::{Ctor, OpCode, ParamKind, Type};
use crate::kernelgen::GHOST_SIG;

#[derive(Debug, Clone)]
enum Value {
    Tensor(TensorId),
    /// Integer read from a one-element tensor that may not exist yet.
    LazyInt(TensorId),
    Int(i64),
    Float(f32),
    Adt(Ctor, Rc<Vec<Value>>),
    Tuple(Rc<Vec<Value>>),
}

#[derive(Debug, Clone, Copy)]
enum TensorState {
    Ready(TensorHandle),
    Pending(NodeId),
}

struct Frame {
    slots: Vec<Value>,
}

struct MapState {
    dst: Slot,
    params: Vec<Slot>,
    /// Zipped list elements, one row per iteration.
    elems: Vec<Vec<Value>>,
    next: usize,
    results: Vec<Value>,
    body: BodyId,
    start: u32,
    max: u32,
}

enum Kont {
    Body { body: BodyId, pc: usize },
    Return { dst: Slot },
    Assign { dst: Slot },
    Map(Box<MapState>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Runnable,
    BlockedOnValue(TensorId),
    Barrier(u32),
    Joining(usize),
    Done,
}

struct Fiber {
    instance: usize,
    frames: Vec<Frame>,
    konts: Vec<Kont>,
    counter: u32,
    phase: u32,
    status: Status,
    /// Parent fiber and the slot the result goes to.
    parent: Option<(usize, Slot)>,
    join_max: u32,
    result: Option<Value>,
}

impl Fiber {
    fn placeholder() -> Fiber {
        Fiber {
            instance: 0,
            frames: vec![],
            konts: vec![],
            counter: 0,
            phase: 0,
            status: Status::Done,
            parent: None,
            join_max: 0,
            result: None,
        }
    }
}

enum Flow {
    Continue,
    Yield,
}

pub(crate) struct Machine<'a> {
    c: &'a Compiled,
    opts: ExecOptions,
    arena: Arena,
    tensors: Vec<TensorState>,
    consts: Vec<Option<TensorId>>,
    fibers: Vec<Fiber>,
    /// Nodes before this index have run.
    flushed: usize,
    flushes: usize,
    trace: ScheduleTrace,
    /// Per block: which outputs are integers.
    int_outputs: Vec<Vec<bool>>,
}

impl<'a> Machine<'a> {
    pub(crate) fn new(c: &'a Compiled, opts: ExecOptions) -> Machine<'a> {
        let int_outputs = c
            .coarsening
            .blocks
            .iter()
            .map(|b| b.outputs.iter().map(|o| b.ops[*o].op == OpCode::Argmax).collect())
            .collect();
        Machine {
            c,
            opts,
            arena: Arena::new(0),
            tensors: Vec::new(),
            consts: vec![None; c.lowered.consts.len()],
            fibers: Vec::new(),
            flushed: 0,
            flushes: 0,
            trace: ScheduleTrace::default(),
            int_outputs,
        }
    }

    fn ready(&mut self, h: TensorHandle) -> TensorId {
        self.tensors.push(TensorState::Ready(h));
        self.tensors.len() - 1
    }

    fn upload(&mut self, t: &HostTensor) -> TensorId {
        let h = self.arena.upload(t);
        self.ready(h)
    }

    fn from_datum(&mut self, d: &Datum) -> Value {
        match d {
            Datum::Tensor(t) => Value::Tensor(self.upload(t)),
            Datum::Int(i) => Value::Int(*i),
            Datum::Float(f) => Value::Float(f.0),
            Datum::Adt(c, xs) => Value::Adt(*c, Rc::new(xs.iter().map(|x| self.from_datum(x)).collect())),
            Datum::Tuple(xs) => Value::Tuple(Rc::new(xs.iter().map(|x| self.from_datum(x)).collect())),
        }
    }

    fn to_datum(&self, v: &Value, ty: &Type) -> Result<Datum, RuntimeError> {
        let handle = |t: TensorId| match self.tensors[t] {
            TensorState::Ready(h) => Ok(h),
            TensorState::Pending(_) => Err(RuntimeError::Internal("output tensor never computed".into())),
        };
        Ok(match (v, ty) {
            (Value::Tensor(t), Type::Tensor(dims)) => Datum::Tensor(self.arena.download(&handle(*t)?, dims)),
            (Value::LazyInt(t), _) => Datum::Int(self.arena.slice(&handle(*t)?)[0] as i64),
            (Value::Int(i), _) => Datum::Int(*i),
            (Value::Float(f), _) => Datum::float(*f),
            (Value::Tuple(xs), Type::Tuple(ts)) => Datum::Tuple(
                xs.iter()
                    .zip(ts)
                    .map(|(x, t)| self.to_datum(x, t))
                    .collect::<Result<_, _>>()?,
            ),
            (Value::Adt(c, xs), Type::List(e)) | (Value::Adt(c, xs), Type::Tree(e)) => {
                let field_ty = |i: usize| match (c, i) {
                    (Ctor::Cons, 0) | (Ctor::Leaf, 0) => &**e,
                    _ => ty,
                };
                Datum::Adt(
                    *c,
                    xs.iter()
                        .enumerate()
                        .map(|(i, x)| self.to_datum(x, field_ty(i)))
                        .collect::<Result<_, _>>()?,
                )
            }
            (v, t) => return Err(RuntimeError::Type(format!("value {v:?} does not fit {t}"))),
        })
    }

    /// Runs every instance to completion and returns their results.
    pub(crate) fn run(
        mut self,
        weights: &[(String, HostTensor)],
        inputs: &[Vec<Datum>],
    ) -> Result<(Vec<Datum>, ScheduleTrace), RuntimeError> {
        if inputs.is_empty() {
            return Err(RuntimeError::Input("empty batch".into()));
        }
        let c: &'a Compiled = self.c;
        let program = &c.typed.program;
        let mut weight_ids = Vec::new();
        for p in program.params.iter().filter(|p| p.kind == ParamKind::Weight) {
            let (_, t) = weights
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| RuntimeError::Input(format!("missing weight `{}`", p.name)))?;
            weight_ids.push(self.upload(t));
        }
        let entry = self.c.lowered.entry;
        for (i, inst) in inputs.iter().enumerate() {
            let mut w = weight_ids.iter();
            let mut inp = inst.iter();
            let mut args = Vec::new();
            for p in &program.params {
                args.push(match p.kind {
                    ParamKind::Weight => Value::Tensor(*w.next().unwrap()),
                    ParamKind::Input => {
                        let d = inp
                            .next()
                            .ok_or_else(|| RuntimeError::Input(format!("instance {i}: missing input `{}`", p.name)))?;
                        self.from_datum(d)
                    }
                });
            }
            let fiber = self.spawn(i, entry, args, None, 0, 0);
            self.fibers.push(fiber);
        }
        let top = inputs.len();

        loop {
            let mut progressed = true;
            while progressed {
                progressed = false;
                let mut i = 0;
                while i < self.fibers.len() {
                    if self.fibers[i].status == Status::Runnable {
                        self.interpret_instance(i)?;
                        progressed = true;
                    }
                    i += 1;
                }
            }
            if self.fibers.iter().any(|f| matches!(f.status, Status::BlockedOnValue(_))) {
                self.flush(true)?;
                for f in &mut self.fibers {
                    if matches!(f.status, Status::BlockedOnValue(_)) {
                        f.status = Status::Runnable;
                    }
                }
                continue;
            }
            let barrier = self.fibers[..top]
                .iter()
                .filter_map(|f| match f.status {
                    Status::Barrier(p) => Some(p),
                    _ => None,
                })
                .min();
            if let Some(p) = barrier {
                for f in &mut self.fibers[..top] {
                    if f.status == Status::Barrier(p) {
                        f.status = Status::Runnable;
                        f.phase = p;
                        f.counter = 0;
                    }
                }
                continue;
            }
            if self.fibers.iter().all(|f| f.status == Status::Done) {
                break;
            }
            return Err(RuntimeError::Deadlock);
        }
        self.flush(false)?;

        let ret = self.c.typed.entry_ret().clone();
        let outputs = self.fibers[..top]
            .iter()
            .map(|f| self.to_datum(f.result.as_ref().expect("finished fiber has a result"), &ret))
            .collect::<Result<Vec<_>, _>>()?;
        let mut trace = self.trace;
        trace.nodes.shrink_to_fit();
        Ok((outputs, trace))
    }

    fn spawn(
        &self,
        instance: usize,
        func: FuncId,
        args: Vec<Value>,
        parent: Option<(usize, Slot)>,
        counter: u32,
        phase: u32,
    ) -> Fiber {
        let mut fiber = Fiber::placeholder();
        fiber.instance = instance;
        fiber.parent = parent;
        fiber.counter = counter;
        fiber.phase = phase;
        fiber.status = Status::Runnable;
        fiber.frames.push(self.frame(func, args));
        fiber.konts.push(Kont::Body {
            body: self.c.lowered.funcs[func].body,
            pc: 0,
        });
        fiber
    }

    fn frame(&self, func: FuncId, args: Vec<Value>) -> Frame {
        let f = &self.c.lowered.funcs[func];
        let mut slots = vec![Value::Int(0); f.slots as usize];
        for (p, a) in f.params.iter().zip(args) {
            slots[*p as usize] = a;
        }
        Frame { slots }
    }

    /// Runs fiber `id` until it blocks, waits or finishes.
    fn interpret_instance(&mut self, id: usize) -> Result<(), RuntimeError> {
        let mut fiber = std::mem::replace(&mut self.fibers[id], Fiber::placeholder());
        let r: Result<(), RuntimeError> = (|| {
            while fiber.status == Status::Runnable {
                if let Flow::Yield = self.step(&mut fiber, id)? {
                    break;
                }
            }
            Ok(())
        })();
        let done = fiber.status == Status::Done;
        let parent = fiber.parent;
        let counter = fiber.counter;
        let result = fiber.result.clone();
        self.fibers[id] = fiber;
        r?;
        if done {
            if let Some((pid, dst)) = parent {
                let p = &mut self.fibers[pid];
                p.frames.last_mut().unwrap().slots[dst as usize] = result.unwrap();
                p.join_max = p.join_max.max(counter);
                if let Status::Joining(n) = p.status {
                    if n == 1 {
                        p.counter = p.join_max;
                        p.status = Status::Runnable;
                    } else {
                        p.status = Status::Joining(n - 1);
                    }
                }
            }
        }
        Ok(())
    }

    fn atom(&mut self, fiber: &Fiber, a: &LAtom) -> Value {
        match a {
            LAtom::Slot(s) => fiber.frames.last().unwrap().slots[*s as usize].clone(),
            LAtom::Const(k) => Value::Tensor(self.const_tensor(*k)),
            LAtom::Int(i) => Value::Int(*i),
            LAtom::Float(f) => Value::Float(*f),
        }
    }

    fn const_tensor(&mut self, k: usize) -> TensorId {
        if let Some(t) = self.consts[k] {
            return t;
        }
        let key = &self.c.lowered.consts[k];
        let t = self.upload(&HostTensor::filled(&key.shape, key.fill()));
        self.consts[k] = Some(t);
        t
    }

    /// The value of a one-element tensor, or `None` if it is still pending.
    fn request_tensor_value(&self, t: TensorId) -> Option<f32> {
        match self.tensors[t] {
            TensorState::Ready(h) => Some(self.arena.slice(&h)[0]),
            TensorState::Pending(_) => None,
        }
    }

    /// A scalar operand; `Err(t)` names the pending tensor it waits on.
    fn scalar(&self, v: &Value) -> Result<Result<ScalarVal, TensorId>, RuntimeError> {
        Ok(match v {
            Value::Int(i) => Ok(ScalarVal::Int(*i)),
            Value::Float(f) => Ok(ScalarVal::Float(*f)),
            Value::LazyInt(t) => match self.request_tensor_value(*t) {
                Some(x) => Ok(ScalarVal::Int(x as i64)),
                None => Err(*t),
            },
            other => return Err(RuntimeError::Type(format!("expected a scalar, found {other:?}"))),
        })
    }

    fn set(fiber: &mut Fiber, dst: Slot, v: Value) {
        fiber.frames.last_mut().unwrap().slots[dst as usize] = v;
    }

    fn block_on(fiber: &mut Fiber, t: TensorId) -> Flow {
        fiber.status = Status::BlockedOnValue(t);
        Flow::Yield
    }

    fn step(&mut self, fiber: &mut Fiber, id: usize) -> Result<Flow, RuntimeError> {
        let c: &'a Compiled = self.c;
        let lowered = &c.lowered;
        let (body, pc) = match fiber.konts.last() {
            Some(Kont::Body { body, pc }) => (*body, *pc),
            _ => unreachable!("a body is always on top while running"),
        };
        let b = &lowered.bodies[body];
        if pc == b.stmts.len() {
            let v = self.atom(fiber, &b.ret);
            fiber.konts.pop();
            self.deliver(fiber, v);
            return Ok(Flow::Continue);
        }
        let advance = |fiber: &mut Fiber| {
            if let Some(Kont::Body { pc, .. }) = fiber.konts.last_mut() {
                *pc += 1;
            }
        };
        match &b.stmts[pc] {
            Stmt::Bind { dst, rhs } => {
                let v = match rhs {
                    Rhs::Atom(a) => self.atom(fiber, a),
                    Rhs::Ctor(c, args) => Value::Adt(*c, Rc::new(args.iter().map(|a| self.atom(fiber, a)).collect())),
                    Rhs::Tuple(args) => Value::Tuple(Rc::new(args.iter().map(|a| self.atom(fiber, a)).collect())),
                    Rhs::Project(a, i) => match self.atom(fiber, a) {
                        Value::Tuple(xs) if *i < xs.len() => xs[*i].clone(),
                        other => return Err(RuntimeError::Type(format!("projection .{i} of {other:?}"))),
                    },
                    Rhs::ScalarOf(a) => match self.atom(fiber, a) {
                        Value::Tensor(t) => match self.request_tensor_value(t) {
                            Some(x) => Value::Float(x),
                            None => return Ok(Self::block_on(fiber, t)),
                        },
                        other => return Err(RuntimeError::Type(format!("scalar_of on {other:?}"))),
                    },
                    Rhs::Binary(op, x, y) => {
                        let (x, y) = (self.atom(fiber, x), self.atom(fiber, y));
                        let x = match self.scalar(&x)? {
                            Ok(s) => s,
                            Err(t) => return Ok(Self::block_on(fiber, t)),
                        };
                        let y = match self.scalar(&y)? {
                            Ok(s) => s,
                            Err(t) => return Ok(Self::block_on(fiber, t)),
                        };
                        match scalar_binary(*op, x, y)? {
                            ScalarVal::Int(i) => Value::Int(i),
                            ScalarVal::Float(f) => Value::Float(f),
                        }
                    }
                };
                Self::set(fiber, *dst, v);
                advance(fiber);
            }
            Stmt::Invoke { block, args, outs } => {
                let args: Vec<Value> = args.iter().map(|a| self.atom(fiber, a)).collect();
                let outs = outs.clone();
                let vals = self.invoke(fiber, *block, &args)?;
                for (s, v) in outs.iter().zip(vals) {
                    Self::set(fiber, *s, v);
                }
                advance(fiber);
            }
            Stmt::Ghost(n) => {
                for _ in 0..*n {
                    let depth = fiber.counter;
                    self.emit(fiber, GHOST_SIG, None, vec![], vec![], depth, true);
                    fiber.counter += 1;
                }
                advance(fiber);
            }
            Stmt::SetPhase(p) => {
                if fiber.parent.is_some() {
                    return Err(RuntimeError::Internal("phase change inside a concurrent call".into()));
                }
                advance(fiber);
                fiber.status = Status::Barrier(*p);
                return Ok(Flow::Yield);
            }
            Stmt::Call { dst, func, args } => {
                let args: Vec<Value> = args.iter().map(|a| self.atom(fiber, a)).collect();
                let (dst, func) = (*dst, *func);
                advance(fiber);
                fiber.frames.push(self.frame(func, args));
                fiber.konts.push(Kont::Return { dst });
                fiber.konts.push(Kont::Body {
                    body: lowered.funcs[func].body,
                    pc: 0,
                });
            }
            Stmt::ParCall { calls } => {
                let calls: Vec<(Slot, FuncId, Vec<Value>)> = calls
                    .iter()
                    .map(|(d, f, args)| (*d, *f, args.iter().map(|a| self.atom(fiber, a)).collect()))
                    .collect();
                advance(fiber);
                fiber.join_max = fiber.counter;
                fiber.status = Status::Joining(calls.len());
                for (dst, func, args) in calls {
                    let child = self.spawn(fiber.instance, func, args, Some((id, dst)), fiber.counter, fiber.phase);
                    self.fibers.push(child);
                }
                return Ok(Flow::Yield);
            }
            Stmt::Map {
                dst,
                params,
                lists,
                body,
            } => {
                let lists: Vec<Vec<Value>> = lists
                    .iter()
                    .map(|a| list_items(&self.atom(fiber, a)))
                    .collect::<Result<_, _>>()?;
                let n = lists.iter().map(Vec::len).min().unwrap_or(0);
                let elems: Vec<Vec<Value>> = (0..n).map(|i| lists.iter().map(|l| l[i].clone()).collect()).collect();
                advance(fiber);
                if n == 0 {
                    Self::set(fiber, *dst, make_list(vec![]));
                } else {
                    let st = MapState {
                        dst: *dst,
                        params: params.clone(),
                        elems,
                        next: 0,
                        results: Vec::with_capacity(n),
                        body: *body,
                        start: fiber.counter,
                        max: fiber.counter,
                    };
                    fiber.konts.push(Kont::Map(Box::new(st)));
                    Self::next_element(fiber);
                }
            }
            Stmt::Match { dst, scrut, arms } => {
                let v = self.atom(fiber, scrut);
                let Value::Adt(c, fields) = &v else {
                    return Err(RuntimeError::Type(format!("match on non-ADT {v:?}")));
                };
                let arm = arms
                    .iter()
                    .find(|a| a.ctor.is_none_or(|k| k == *c))
                    .ok_or_else(|| RuntimeError::Type(format!("no arm matches {}", c.name())))?;
                for (s, f) in arm.binders.iter().zip(fields.iter()) {
                    Self::set(fiber, *s, f.clone());
                }
                let (dst, body) = (*dst, arm.body);
                advance(fiber);
                fiber.konts.push(Kont::Assign { dst });
                fiber.konts.push(Kont::Body { body, pc: 0 });
            }
            Stmt::If {
                dst,
                cond,
                then_body,
                else_body,
                ..
            } => {
                let c = self.atom(fiber, cond);
                let c = match self.scalar(&c)? {
                    Ok(s) => s,
                    Err(t) => return Ok(Self::block_on(fiber, t)),
                };
                let body = if c.truthy() { *then_body } else { *else_body };
                let dst = *dst;
                advance(fiber);
                fiber.konts.push(Kont::Assign { dst });
                fiber.konts.push(Kont::Body { body, pc: 0 });
            }
        }
        Ok(Flow::Continue)
    }

    /// Binds the next map element and starts its body.
    fn next_element(fiber: &mut Fiber) {
        let Some(Kont::Map(st)) = fiber.konts.last_mut() else {
            unreachable!()
        };
        let i = st.next;
        st.next += 1;
        let body = st.body;
        let binds: Vec<(Slot, Value)> = st.params.iter().copied().zip(st.elems[i].iter().cloned()).collect();
        fiber.counter = st.start;
        for (s, v) in binds {
            Self::set(fiber, s, v);
        }
        fiber.konts.push(Kont::Body { body, pc: 0 });
    }

    /// Passes a finished body's value to whatever is waiting for it.
    fn deliver(&mut self, fiber: &mut Fiber, v: Value) {
        match fiber.konts.last_mut() {
            None => {
                fiber.result = Some(v);
                fiber.status = Status::Done;
            }
            Some(Kont::Return { dst }) => {
                let dst = *dst;
                fiber.konts.pop();
                fiber.frames.pop();
                Self::set(fiber, dst, v);
            }
            Some(Kont::Assign { dst }) => {
                let dst = *dst;
                fiber.konts.pop();
                Self::set(fiber, dst, v);
            }
            Some(Kont::Map(st)) => {
                st.results.push(v);
                st.max = st.max.max(fiber.counter);
                if st.next < st.elems.len() {
                    Self::next_element(fiber);
                } else {
                    let Some(Kont::Map(st)) = fiber.konts.pop() else { unreachable!() };
                    fiber.counter = st.max;
                    Self::set(fiber, st.dst, make_list(st.results));
                }
            }
            Some(Kont::Body { .. }) => unreachable!("bodies finish through their continuation"),
        }
    }

    fn invoke(&mut self, fiber: &mut Fiber, block: usize, args: &[Value]) -> Result<Vec<Value>, RuntimeError> {
        let mut inputs = Vec::with_capacity(args.len());
        for a in args {
            match a {
                Value::Tensor(t) | Value::LazyInt(t) => inputs.push(*t),
                other => return Err(RuntimeError::Type(format!("block input {other:?} is not a tensor"))),
            }
        }
        let mut producers: Vec<NodeId> = inputs
            .iter()
            .filter_map(|t| match self.tensors[*t] {
                TensorState::Pending(n) => Some(n),
                TensorState::Ready(_) => None,
            })
            .collect();
        producers.sort_unstable();
        producers.dedup();
        let floor = producers
            .iter()
            .map(|n| &self.trace.nodes[*n])
            .filter(|n| n.phase == fiber.phase)
            .map(|n| n.depth + 1)
            .max()
            .unwrap_or(0);
        let depth = match self.c.coarsening.blocks[block].hoist {
            HoistClass::StaticDepth(d) => d.max(floor),
            HoistClass::Dynamic => {
                let d = fiber.counter.max(floor);
                fiber.counter = d + 1;
                d
            }
        };
        let sig = self.c.kernels.block_sig[block];
        let n_out = self.c.plans[sig].outputs.len();
        let node = self.trace.nodes.len();
        let outputs: Vec<TensorId> = (0..n_out)
            .map(|_| {
                self.tensors.push(TensorState::Pending(node));
                self.tensors.len() - 1
            })
            .collect();
        self.trace.edges += producers.len() as u64;
        self.emit(fiber, sig, Some(block), inputs, outputs.clone(), depth, false);
        self.trace.nodes.last_mut().unwrap().producers = producers;
        Ok(outputs
            .into_iter()
            .zip(&self.int_outputs[block])
            .map(|(t, int)| if *int { Value::LazyInt(t) } else { Value::Tensor(t) })
            .collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        fiber: &Fiber,
        sig: usize,
        block: Option<usize>,
        inputs: Vec<TensorId>,
        outputs: Vec<TensorId>,
        depth: u32,
        ghost: bool,
    ) {
        let id = self.trace.nodes.len();
        self.trace.nodes.push(DfgNode {
            id,
            sig,
            instance: fiber.instance,
            block,
            inputs,
            outputs,
            producers: vec![],
            depth,
            phase: fiber.phase,
            ghost,
        });
    }

    /// Schedules and executes every pending node. Returns without touching
    /// any counter when nothing is pending.
    fn flush(&mut self, sync: bool) -> Result<(), RuntimeError> {
        let start = self.flushed;
        let end = self.trace.nodes.len();
        if start == end {
            return Ok(());
        }
        let window: Vec<&DfgNode> = self.trace.nodes[start..end].iter().collect();
        let schedule = match self.opts.scheduler {
            Scheduler::Depth => schedule_depth(&window),
            Scheduler::Agenda => schedule_agenda(&window)?,
        };
        self.trace.counters.scheduler_ops += schedule.ops;
        for batch in schedule.batches {
            let first = &self.trace.nodes[batch[0]];
            let (sig, phase, ghost) = (first.sig, first.phase, first.ghost);
            let depth = batch.iter().map(|n| self.trace.nodes[*n].depth).min().unwrap();
            if !ghost {
                let mut handles = Vec::with_capacity(batch.len());
                for n in &batch {
                    let node = &self.trace.nodes[*n];
                    let mut hs = Vec::with_capacity(node.inputs.len());
                    for t in &node.inputs {
                        match self.tensors[*t] {
                            TensorState::Ready(h) => hs.push(h),
                            TensorState::Pending(p) => {
                                return Err(RuntimeError::Internal(format!(
                                    "node {n} scheduled before its producer {p}"
                                )))
                            }
                        }
                    }
                    handles.push(hs);
                }
                let r = exec_batched(&self.c.plans[sig], &handles, self.opts.gather, &mut self.arena)?;
                for (n, outs) in batch.iter().zip(r.outputs) {
                    for (t, h) in self.trace.nodes[*n].outputs.iter().zip(outs) {
                        self.tensors[*t] = TensorState::Ready(h);
                    }
                }
                self.trace.counters.kernel_launches += 1;
                self.trace.counters.gather_bytes += r.gather_bytes;
            }
            self.trace.batches.push(BatchRecord {
                phase,
                depth,
                sig,
                size: batch.len(),
                ghost,
                flush: self.flushes,
                nodes: batch,
            });
        }
        self.trace.counters.total_nodes += (end - start) as u64;
        if sync {
            self.trace.counters.sync_points += 1;
        }
        self.flushed = end;
        self.flushes += 1;
        Ok(())
    }
}

fn list_items(v: &Value) -> Result<Vec<Value>, RuntimeError> {
    let mut out = Vec::new();
    let mut cur = v.clone();
    loop {
        match cur {
            Value::Adt(Ctor::Nil, _) => return Ok(out),
            Value::Adt(Ctor::Cons, xs) => {
                out.push(xs[0].clone());
                cur = xs[1].clone();
            }
            other => return Err(RuntimeError::Type(format!("expected a list, found {other:?}"))),
        }
    }
}

fn make_list(items: Vec<Value>) -> Value {
    items
        .into_iter()
        .rev()
        .fold(Value::Adt(Ctor::Nil, Rc::new(vec![])), |tail, h| {
            Value::Adt(Ctor::Cons, Rc::new(vec![h, tail]))
        })
}
