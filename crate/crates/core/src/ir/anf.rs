//! Alpha-renaming and A-normal form.
//!
//! After `normalize`, every prim-op, call, map, constructor, tuple,
//! projection, scalar extraction and binary operation is the bound
//! expression of a `let` whose operands are atoms. Tails are atoms, matches
//! or conditionals. Phase marker lets are dropped; their information lives
//! in the function annotations.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::ast::*;
use super::parser::is_phase_marker;

/// Renames binders so that every variable name is bound once per function.
/// Wildcard binders get fresh names too.
pub fn uniquify(program: &Program) -> Program {
    let mut out = program.clone();
    for f in out.functions.values_mut() {
        let mut r = Renamer {
            used: f.params.iter().map(|p| p.name.clone()).collect(),
            env: f
                .params
                .iter()
                .map(|p| (p.name.clone(), p.name.clone()))
                .collect(),
        };
        r.expr(&mut f.body);
    }
    out
}

struct Renamer {
    used: HashSet<String>,
    env: Vec<(String, String)>,
}

impl Renamer {
    fn fresh(&mut self, base: &str) -> String {
        let base = if base == "_" { "_w" } else { base };
        if base != "_w" && self.used.insert(base.to_string()) {
            return base.to_string();
        }
        let mut i = 0;
        loop {
            let cand = if base == "_w" {
                format!("_w{i}")
            } else {
                format!("{base}_{i}")
            };
            if self.used.insert(cand.clone()) {
                return cand;
            }
            i += 1;
        }
    }

    fn push(&mut self, name: &mut String) {
        let new = self.fresh(name);
        self.env.push((name.clone(), new.clone()));
        *name = new;
    }

    fn expr(&mut self, e: &mut Expr) {
        match e {
            Expr::Var(v) => {
                if let Some((_, new)) = self.env.iter().rev().find(|(old, _)| old == v) {
                    *v = new.clone();
                }
            }
            Expr::Let {
                name,
                phase,
                bound,
                body,
            } => {
                self.expr(bound);
                let mark = self.env.len();
                if !is_phase_marker(name, *phase, bound) {
                    self.push(name);
                }
                self.expr(body);
                self.env.truncate(mark);
            }
            Expr::Match { scrutinee, arms } => {
                self.expr(scrutinee);
                for arm in arms {
                    let mark = self.env.len();
                    if let Pattern::Ctor(_, binders) = &mut arm.pattern {
                        for b in binders {
                            self.push(b);
                        }
                    }
                    self.expr(&mut arm.body);
                    self.env.truncate(mark);
                }
            }
            Expr::Map { lambda, lists, .. } => {
                for l in lists.iter_mut() {
                    self.expr(l);
                }
                let mark = self.env.len();
                for p in &mut lambda.params {
                    self.push(&mut p.name);
                }
                self.expr(&mut lambda.body);
                self.env.truncate(mark);
            }
            Expr::Call { args, .. }
            | Expr::PrimOp { args, .. }
            | Expr::Ctor(_, args)
            | Expr::Tuple(args) => {
                for a in args {
                    self.expr(a);
                }
            }
            Expr::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                self.expr(cond);
                self.expr(then_branch);
                self.expr(else_branch);
            }
            Expr::Project(x, _) | Expr::ScalarOf(x) => self.expr(x),
            Expr::Binary(_, _, a, b) => {
                self.expr(a);
                self.expr(b);
            }
            Expr::ConstTensor { .. } | Expr::Int(_) | Expr::Float(_) => {}
        }
    }
}

/// Converts a uniquely named program to A-normal form. Binary sites listed in
/// `tensor_binaries` become `add`/`mul` prim-ops with the same site id.
///
/// Returns the program, the stage index of every top-level variable of the
/// entry function, and the number of entry stages (including the tail).
pub fn normalize(
    program: &Program,
    tensor_binaries: &BTreeSet<SiteId>,
) -> (Program, BTreeMap<String, usize>, usize) {
    let mut out = program.clone();
    let mut stages = BTreeMap::new();
    let mut stage_count = 0;
    for f in out.functions.values_mut() {
        let mut used = HashSet::new();
        for p in &f.params {
            used.insert(p.name.clone());
        }
        f.body.walk(&mut |e| match e {
            Expr::Let { name, .. } => {
                used.insert(name.clone());
            }
            Expr::Match { arms, .. } => {
                for arm in arms {
                    if let Pattern::Ctor(_, bs) = &arm.pattern {
                        used.extend(bs.iter().cloned());
                    }
                }
            }
            Expr::Map { lambda, .. } => used.extend(lambda.params.iter().map(|p| p.name.clone())),
            _ => {}
        });
        let mut n = Normalizer {
            used,
            counter: 0,
            tensor_binaries,
        };
        let body = std::mem::replace(&mut f.body, Expr::Int(0));
        if f.name == program.entry {
            let (b, st, count) = n.entry(body);
            f.body = b;
            stages = st;
            stage_count = count;
        } else {
            f.body = n.norm(body);
        }
    }
    (out, stages, stage_count)
}

struct Normalizer<'a> {
    used: HashSet<String>,
    counter: usize,
    tensor_binaries: &'a BTreeSet<SiteId>,
}

type Binds = Vec<(String, Expr)>;

fn wrap(binds: Binds, tail: Expr) -> Expr {
    binds
        .into_iter()
        .rev()
        .fold(tail, |body, (name, bound)| Expr::Let {
            name,
            phase: None,
            bound: Box::new(bound),
            body: Box::new(body),
        })
}

impl Normalizer<'_> {
    fn fresh(&mut self) -> String {
        loop {
            let cand = format!("_t{}", self.counter);
            self.counter += 1;
            if self.used.insert(cand.clone()) {
                return cand;
            }
        }
    }

    fn norm(&mut self, e: Expr) -> Expr {
        let mut binds = Vec::new();
        let tail = self.tail(e, &mut binds);
        wrap(binds, tail)
    }

    /// Normalizes the entry body stage by stage.
    fn entry(&mut self, mut e: Expr) -> (Expr, BTreeMap<String, usize>, usize) {
        let mut binds = Vec::new();
        let mut stages = BTreeMap::new();
        let mut stage = 0;
        loop {
            match e {
                Expr::Let {
                    name,
                    phase,
                    bound,
                    body,
                } => {
                    if !is_phase_marker(&name, phase, &bound) {
                        let start = binds.len();
                        let b = self.bound(*bound, &mut binds);
                        binds.push((name, b));
                        for (n, _) in &binds[start..] {
                            stages.insert(n.clone(), stage);
                        }
                        stage += 1;
                    }
                    e = *body;
                }
                other => {
                    let start = binds.len();
                    let tail = self.tail(other, &mut binds);
                    for (n, _) in &binds[start..] {
                        stages.insert(n.clone(), stage);
                    }
                    return (wrap(binds, tail), stages, stage + 1);
                }
            }
        }
    }

    fn tail(&mut self, e: Expr, binds: &mut Binds) -> Expr {
        match e {
            Expr::Let {
                name,
                phase,
                bound,
                body,
            } => {
                if !is_phase_marker(&name, phase, &bound) {
                    let b = self.bound(*bound, binds);
                    binds.push((name, b));
                }
                self.tail(*body, binds)
            }
            Expr::Match { .. } | Expr::If { .. } => self.bound(e, binds),
            e if e.is_atom() => e,
            e => self.atom(e, binds),
        }
    }

    fn atom(&mut self, e: Expr, binds: &mut Binds) -> Expr {
        if e.is_atom() {
            return e;
        }
        let b = self.bound(e, binds);
        let t = self.fresh();
        binds.push((t.clone(), b));
        Expr::Var(t)
    }

    fn atoms(&mut self, es: Vec<Expr>, binds: &mut Binds) -> Vec<Expr> {
        es.into_iter().map(|e| self.atom(e, binds)).collect()
    }

    fn bound(&mut self, e: Expr, binds: &mut Binds) -> Expr {
        match e {
            Expr::Let {
                name,
                phase,
                bound,
                body,
            } => {
                if !is_phase_marker(&name, phase, &bound) {
                    let b = self.bound(*bound, binds);
                    binds.push((name, b));
                }
                self.bound(*body, binds)
            }
            Expr::Match { scrutinee, arms } => {
                let s = self.atom(*scrutinee, binds);
                Expr::Match {
                    scrutinee: Box::new(s),
                    arms: arms
                        .into_iter()
                        .map(|a| Arm {
                            pattern: a.pattern,
                            body: self.norm(a.body),
                        })
                        .collect(),
                }
            }
            Expr::If {
                site,
                cond,
                then_branch,
                else_branch,
            } => {
                let c = self.atom(*cond, binds);
                Expr::If {
                    site,
                    cond: Box::new(c),
                    then_branch: Box::new(self.norm(*then_branch)),
                    else_branch: Box::new(self.norm(*else_branch)),
                }
            }
            Expr::Call {
                site,
                callee,
                args,
                group,
            } => Expr::Call {
                site,
                callee,
                args: self.atoms(args, binds),
                group,
            },
            Expr::PrimOp { site, op, args } => Expr::PrimOp {
                site,
                op,
                args: self.atoms(args, binds),
            },
            Expr::Map {
                site,
                lambda,
                lists,
            } => {
                let lists = self.atoms(lists, binds);
                Expr::Map {
                    site,
                    lambda: Lambda {
                        params: lambda.params,
                        body: Box::new(self.norm(*lambda.body)),
                    },
                    lists,
                }
            }
            Expr::Ctor(c, args) => Expr::Ctor(c, self.atoms(args, binds)),
            Expr::Tuple(items) => Expr::Tuple(self.atoms(items, binds)),
            Expr::Project(x, i) => Expr::Project(Box::new(self.atom(*x, binds)), i),
            Expr::ScalarOf(x) => Expr::ScalarOf(Box::new(self.atom(*x, binds))),
            Expr::Binary(site, op, a, b) => {
                let a = self.atom(*a, binds);
                let b = self.atom(*b, binds);
                if self.tensor_binaries.contains(&site) {
                    let op = if op == BinOp::Mul {
                        OpCode::Mul
                    } else {
                        OpCode::Add
                    };
                    Expr::PrimOp {
                        site,
                        op,
                        args: vec![a, b],
                    }
                } else {
                    Expr::Binary(site, op, Box::new(a), Box::new(b))
                }
            }
            atom => atom,
        }
    }
}

/// True when `e` satisfies the A-normal form produced by `normalize`.
pub fn is_anf(e: &Expr) -> bool {
    fn bound_ok(e: &Expr) -> bool {
        match e {
            Expr::Let { .. } => false,
            Expr::Match { scrutinee, arms } => {
                scrutinee.is_atom() && arms.iter().all(|a| is_anf(&a.body))
            }
            Expr::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => cond.is_atom() && is_anf(then_branch) && is_anf(else_branch),
            Expr::Map { lambda, lists, .. } => {
                lists.iter().all(Expr::is_atom) && is_anf(&lambda.body)
            }
            Expr::Call { args, .. }
            | Expr::PrimOp { args, .. }
            | Expr::Ctor(_, args)
            | Expr::Tuple(args) => args.iter().all(Expr::is_atom),
            Expr::Project(x, _) | Expr::ScalarOf(x) => x.is_atom(),
            Expr::Binary(_, _, a, b) => a.is_atom() && b.is_atom(),
            e => e.is_atom(),
        }
    }
    match e {
        Expr::Let { bound, body, .. } => bound_ok(bound) && is_anf(body),
        Expr::Match { .. } | Expr::If { .. } => bound_ok(e),
        e => e.is_atom(),
    }
}
