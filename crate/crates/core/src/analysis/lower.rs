//! Lowering of the analysed program into the form the runtime executes.
//!
//! Variables become frame slots, prim-op regions become block invocations,
//! adjacent concurrent calls become one fork-join statement, and phase
//! changes in the entry function become barriers. Conditionals whose
//! branches advance the depth counter by different amounts get ghost units
//! at the start of the shorter branch.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::coarsen::{Coarsening, InputAtom};
use super::hoist::HoistClass;
use super::phases::{reachable, PhaseMap};
use super::taint::ConstKey;
use crate::ir::*;

pub type Slot = u32;
pub type FuncId = usize;
pub type BodyId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LAtom {
    Slot(Slot),
    /// Index into the interned constant table.
    Const(usize),
    Int(i64),
    Float(f32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Rhs {
    Atom(LAtom),
    Ctor(Ctor, Vec<LAtom>),
    Tuple(Vec<LAtom>),
    Project(LAtom, usize),
    ScalarOf(LAtom),
    Binary(BinOp, LAtom, LAtom),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LArm {
    /// `None` matches anything.
    pub ctor: Option<Ctor>,
    pub binders: Vec<Slot>,
    pub body: BodyId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Stmt {
    Bind {
        dst: Slot,
        rhs: Rhs,
    },
    Invoke {
        block: usize,
        args: Vec<LAtom>,
        outs: Vec<Slot>,
    },
    Call {
        dst: Slot,
        func: FuncId,
        args: Vec<LAtom>,
    },
    /// Concurrent calls: each child starts from the parent's depth counter.
    ParCall {
        calls: Vec<(Slot, FuncId, Vec<LAtom>)>,
    },
    Map {
        dst: Slot,
        params: Vec<Slot>,
        lists: Vec<LAtom>,
        body: BodyId,
    },
    Match {
        dst: Slot,
        scrut: LAtom,
        arms: Vec<LArm>,
    },
    If {
        site: SiteId,
        dst: Slot,
        cond: LAtom,
        then_body: BodyId,
        else_body: BodyId,
        /// The result is bound by a let and read afterwards.
        bound: bool,
    },
    Ghost(u32),
    SetPhase(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Body {
    pub stmts: Vec<Stmt>,
    pub ret: LAtom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LFunc {
    pub name: String,
    pub params: Vec<Slot>,
    pub slots: u32,
    pub body: BodyId,
    pub recursive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lowered {
    pub funcs: Vec<LFunc>,
    pub bodies: Vec<Body>,
    pub consts: Vec<ConstKey>,
    pub entry: FuncId,
}

impl Lowered {
    pub fn func_id(&self, name: &str) -> Option<FuncId> {
        self.funcs.iter().position(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Then,
    Else,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GhostEntry {
    pub site: SiteId,
    pub func: String,
    pub branch: Branch,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct GhostPlan {
    pub entries: Vec<GhostEntry>,
    /// Conditionals left alone because a branch has no fixed advance.
    pub skipped: Vec<SiteId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LowerOptions {
    pub ghosts: bool,
    pub phases: bool,
}

impl Default for LowerOptions {
    fn default() -> Self {
        LowerOptions {
            ghosts: true,
            phases: true,
        }
    }
}

pub fn lower(
    typed: &TypedProgram,
    coarsening: &Coarsening,
    phases: &PhaseMap,
    opts: LowerOptions,
) -> (Lowered, GhostPlan) {
    let program = &typed.program;
    let names: Vec<&String> = program.functions.keys().collect();
    let ids: HashMap<&str, FuncId> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut l = Lowerer {
        coarsening,
        ids: &ids,
        bodies: Vec::new(),
        consts: Vec::new(),
        const_ids: HashMap::new(),
        slots: HashMap::new(),
        func: String::new(),
    };
    let mut funcs = Vec::new();
    for f in program.functions.values() {
        l.slots.clear();
        l.func = f.name.clone();
        let params = f.params.iter().map(|p| l.slot(&p.name)).collect();
        let body = if f.name == program.entry {
            l.entry_body(&f.body, &typed.main_stages, phases, opts.phases)
        } else {
            l.body(&f.body)
        };
        let mut direct = BTreeSet::new();
        f.body.walk(&mut |e| {
            if let Expr::Call { callee, .. } = e {
                direct.insert(callee.as_str());
            }
        });
        let recursive = reachable(program, direct).contains(f.name.as_str());
        funcs.push(LFunc {
            name: f.name.clone(),
            params,
            slots: l.slots.len() as u32,
            body,
            recursive,
        });
    }
    let mut lowered = Lowered {
        funcs,
        bodies: l.bodies,
        consts: l.consts,
        entry: ids[program.entry.as_str()],
    };
    let plan = plan_ghosts(&mut lowered, coarsening, opts.ghosts);
    (lowered, plan)
}

struct Lowerer<'a> {
    coarsening: &'a Coarsening,
    ids: &'a HashMap<&'a str, FuncId>,
    bodies: Vec<Body>,
    consts: Vec<ConstKey>,
    const_ids: HashMap<ConstKey, usize>,
    slots: HashMap<String, Slot>,
    func: String,
}

impl Lowerer<'_> {
    fn slot(&mut self, name: &str) -> Slot {
        let n = self.slots.len() as Slot;
        *self.slots.entry(name.to_string()).or_insert(n)
    }

    fn fresh(&mut self) -> Slot {
        let n = self.slots.len();
        self.slot(&format!("#ret{n}"))
    }

    fn konst(&mut self, key: ConstKey) -> usize {
        let n = self.consts.len();
        *self.const_ids.entry(key.clone()).or_insert_with(|| {
            self.consts.push(key);
            n
        })
    }

    fn atom(&mut self, e: &Expr) -> LAtom {
        match e {
            Expr::Var(v) => LAtom::Slot(self.slot(v)),
            Expr::ConstTensor { shape, fill } => LAtom::Const(self.konst(ConstKey::new(shape, fill.0))),
            Expr::Int(i) => LAtom::Int(*i),
            Expr::Float(f) => LAtom::Float(f.0),
            other => panic!("expected an atom, found {other:?}"),
        }
    }

    fn push_body(&mut self, b: Body) -> BodyId {
        self.bodies.push(b);
        self.bodies.len() - 1
    }

    fn body(&mut self, e: &Expr) -> BodyId {
        let (lets, tail) = split_chain(e);
        let mut stmts = Vec::new();
        self.chain(&lets, &mut stmts, &mut |_, _| {});
        let ret = self.tail(tail, &mut stmts);
        self.push_body(Body { stmts, ret })
    }

    fn entry_body(&mut self, e: &Expr, stages: &BTreeMap<String, usize>, phases: &PhaseMap, enabled: bool) -> BodyId {
        let (lets, tail) = split_chain(e);
        let mut stmts = Vec::new();
        let mut current = 0;
        self.chain(&lets, &mut stmts, &mut |name, stmts| {
            if !enabled {
                return;
            }
            if let Some(s) = stages.get(name) {
                let p = phases.phase_of_stage(*s);
                if p != current {
                    stmts.push(Stmt::SetPhase(p));
                    current = p;
                }
            }
        });
        let ret = self.tail(tail, &mut stmts);
        self.push_body(Body { stmts, ret })
    }

    /// Lowers a let sequence. `before` runs ahead of each top-level item
    /// with the name of its first let.
    fn chain(&mut self, lets: &[(&str, &Expr)], stmts: &mut Vec<Stmt>, before: &mut dyn FnMut(&str, &mut Vec<Stmt>)) {
        let mut i = 0;
        while i < lets.len() {
            let (name, bound) = lets[i];
            before(name, stmts);
            if let Some(r) = self.coarsening.region_at(&self.func, name) {
                let r = r.clone();
                let by_name: HashMap<&str, &Expr> = lets[i..i + r.lets.len()].iter().copied().collect();
                for p in &r.pass {
                    self.let_stmt(p, by_name[p.as_str()], false, stmts);
                }
                for b in &r.blocks {
                    let block = &self.coarsening.blocks[*b];
                    let args = block
                        .inputs
                        .iter()
                        .map(|inp| match &inp.atom {
                            InputAtom::Var(v) => LAtom::Slot(self.slot(v)),
                            InputAtom::Const(k) => LAtom::Const(self.konst(k.clone())),
                        })
                        .collect();
                    let outs = block.outputs.iter().map(|o| self.slot(&block.ops[*o].name)).collect();
                    stmts.push(Stmt::Invoke { block: *b, args, outs });
                }
                i += r.lets.len();
                continue;
            }
            if let Expr::Call { group: Some(g), .. } = bound {
                let mut calls = Vec::new();
                while i < lets.len() {
                    let (n, b) = lets[i];
                    match b {
                        Expr::Call {
                            group: Some(h),
                            callee,
                            args,
                            ..
                        } if h == g => {
                            let dst = self.slot(n);
                            let args = args.iter().map(|a| self.atom(a)).collect();
                            calls.push((dst, self.ids[callee.as_str()], args));
                            i += 1;
                        }
                        _ => break,
                    }
                }
                stmts.push(Stmt::ParCall { calls });
                continue;
            }
            self.let_stmt(name, bound, true, stmts);
            i += 1;
        }
    }

    fn let_stmt(&mut self, name: &str, bound: &Expr, is_let: bool, stmts: &mut Vec<Stmt>) {
        let dst = self.slot(name);
        let rhs = match bound {
            Expr::Var(_) | Expr::ConstTensor { .. } | Expr::Int(_) | Expr::Float(_) => Rhs::Atom(self.atom(bound)),
            Expr::Ctor(c, args) => Rhs::Ctor(*c, args.iter().map(|a| self.atom(a)).collect()),
            Expr::Tuple(args) => Rhs::Tuple(args.iter().map(|a| self.atom(a)).collect()),
            Expr::Project(x, i) => Rhs::Project(self.atom(x), *i),
            Expr::ScalarOf(x) => Rhs::ScalarOf(self.atom(x)),
            Expr::Binary(_, op, a, b) => Rhs::Binary(*op, self.atom(a), self.atom(b)),
            Expr::Call { callee, args, .. } => {
                let args = args.iter().map(|a| self.atom(a)).collect();
                stmts.push(Stmt::Call {
                    dst,
                    func: self.ids[callee.as_str()],
                    args,
                });
                return;
            }
            Expr::Map { lambda, lists, .. } => {
                let params = lambda.params.iter().map(|p| self.slot(&p.name)).collect();
                let lists = lists.iter().map(|a| self.atom(a)).collect();
                let body = self.body(&lambda.body);
                stmts.push(Stmt::Map {
                    dst,
                    params,
                    lists,
                    body,
                });
                return;
            }
            Expr::Match { .. } | Expr::If { .. } => {
                self.control(dst, bound, is_let, stmts);
                return;
            }
            Expr::PrimOp { .. } => unreachable!("prim-ops are lowered through their region"),
            Expr::Let { .. } => unreachable!("nested let in bound position"),
        };
        stmts.push(Stmt::Bind { dst, rhs });
    }

    fn control(&mut self, dst: Slot, e: &Expr, bound: bool, stmts: &mut Vec<Stmt>) {
        match e {
            Expr::Match { scrutinee, arms } => {
                let scrut = self.atom(scrutinee);
                let arms = arms
                    .iter()
                    .map(|a| {
                        let (ctor, binders) = match &a.pattern {
                            Pattern::Wildcard => (None, vec![]),
                            Pattern::Ctor(c, bs) => (Some(*c), bs.iter().map(|b| self.slot(b)).collect()),
                        };
                        LArm {
                            ctor,
                            binders,
                            body: self.body(&a.body),
                        }
                    })
                    .collect();
                stmts.push(Stmt::Match { dst, scrut, arms });
            }
            Expr::If {
                site,
                cond,
                then_branch,
                else_branch,
            } => {
                let cond = self.atom(cond);
                let then_body = self.body(then_branch);
                let else_body = self.body(else_branch);
                stmts.push(Stmt::If {
                    site: *site,
                    dst,
                    cond,
                    then_body,
                    else_body,
                    bound,
                });
            }
            _ => unreachable!(),
        }
    }

    fn tail(&mut self, e: &Expr, stmts: &mut Vec<Stmt>) -> LAtom {
        match e {
            Expr::Match { .. } | Expr::If { .. } => {
                let dst = self.fresh();
                self.control(dst, e, false, stmts);
                LAtom::Slot(dst)
            }
            other => self.atom(other),
        }
    }
}

fn split_chain(mut e: &Expr) -> (Vec<(&str, &Expr)>, &Expr) {
    let mut lets = Vec::new();
    while let Expr::Let { name, bound, body, .. } = e {
        lets.push((name.as_str(), &**bound));
        e = body;
    }
    (lets, e)
}

struct Advance<'a> {
    lowered: &'a Lowered,
    coarsening: &'a Coarsening,
    ghosts: bool,
    memo: HashMap<FuncId, Option<u32>>,
}

impl Advance<'_> {
    fn func(&mut self, f: FuncId) -> Option<u32> {
        if let Some(a) = self.memo.get(&f) {
            return *a;
        }
        let lf = &self.lowered.funcs[f];
        let a = if lf.recursive { None } else { self.body(lf.body) };
        self.memo.insert(f, a);
        a
    }

    fn body(&mut self, b: BodyId) -> Option<u32> {
        let mut total = 0;
        for s in &self.lowered.bodies[b].stmts {
            total += self.stmt(s)?;
        }
        Some(total)
    }

    fn stmt(&mut self, s: &Stmt) -> Option<u32> {
        match s {
            Stmt::Bind { .. } => Some(0),
            Stmt::Invoke { block, .. } => Some(match self.coarsening.blocks[*block].hoist {
                HoistClass::Dynamic => 1,
                HoistClass::StaticDepth(_) => 0,
            }),
            Stmt::Ghost(n) => Some(*n),
            Stmt::Call { func, .. } => self.func(*func),
            Stmt::ParCall { .. } | Stmt::SetPhase(_) => None,
            Stmt::Map { body, .. } => match self.body(*body)? {
                0 => Some(0),
                _ => None,
            },
            Stmt::Match { arms, .. } => {
                let mut out = None;
                for a in arms {
                    let x = self.body(a.body)?;
                    if out.is_some_and(|o| o != x) {
                        return None;
                    }
                    out = Some(x);
                }
                out
            }
            Stmt::If {
                then_body,
                else_body,
                bound,
                ..
            } => {
                let (t, e) = (self.body(*then_body)?, self.body(*else_body)?);
                if t == e {
                    Some(t)
                } else if self.ghosts && *bound {
                    Some(t.max(e))
                } else {
                    None
                }
            }
        }
    }
}

fn plan_ghosts(lowered: &mut Lowered, coarsening: &Coarsening, ghosts: bool) -> GhostPlan {
    let mut plan = GhostPlan::default();
    let mut pads: Vec<(BodyId, u32)> = Vec::new();
    {
        let mut adv = Advance {
            lowered,
            coarsening,
            ghosts,
            memo: HashMap::new(),
        };
        for f in &lowered.funcs {
            let mut todo = vec![f.body];
            while let Some(b) = todo.pop() {
                for s in &lowered.bodies[b].stmts {
                    match s {
                        Stmt::Map { body, .. } => todo.push(*body),
                        Stmt::Match { arms, .. } => todo.extend(arms.iter().map(|a| a.body)),
                        Stmt::If {
                            site,
                            then_body,
                            else_body,
                            bound,
                            ..
                        } => {
                            todo.push(*then_body);
                            todo.push(*else_body);
                            if !*bound {
                                continue;
                            }
                            match (adv.body(*then_body), adv.body(*else_body)) {
                                (Some(t), Some(e)) if t != e => {
                                    let (branch, body, count) = if t < e {
                                        (Branch::Then, *then_body, e - t)
                                    } else {
                                        (Branch::Else, *else_body, t - e)
                                    };
                                    plan.entries.push(GhostEntry {
                                        site: *site,
                                        func: f.name.clone(),
                                        branch,
                                        count,
                                    });
                                    pads.push((body, count));
                                }
                                (Some(_), Some(_)) => {}
                                _ => plan.skipped.push(*site),
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    plan.entries.sort_by_key(|e| e.site);
    plan.skipped.sort_unstable();
    if ghosts {
        for (b, n) in pads {
            lowered.bodies[b].stmts.insert(0, Stmt::Ghost(n));
        }
    }
    plan
}
