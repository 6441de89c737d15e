//! Parameter-reuse analysis.
//!
//! A 1-call-site-sensitive abstract interpretation that tracks, for every
//! value, the set of sources it may come from. Data structures are collapsed:
//! a list, tree or tuple carries the union of its parts. A prim-op argument
//! whose source set is a single weight or constant is identical across every
//! instance of a mini-batch and can be passed to a batched kernel once.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::ir::*;

/// Where a value may come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Source {
    /// A weight parameter of the entry function.
    Param(String),
    /// Any per-instance input.
    Input,
    /// An interned constant tensor.
    Const(ConstKey),
    /// The result of the prim-op at this site.
    Op(SiteId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ConstKey {
    pub shape: Vec<usize>,
    pub fill_bits: u32,
}

impl ConstKey {
    pub fn new(shape: &[usize], fill: f32) -> ConstKey {
        ConstKey {
            shape: shape.to_vec(),
            fill_bits: fill.to_bits(),
        }
    }

    pub fn fill(&self) -> f32 {
        f32::from_bits(self.fill_bits)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Param(p) => write!(f, "{p}"),
            Source::Input => write!(f, "input"),
            Source::Const(c) => write!(f, "const{:?}={}", c.shape, c.fill()),
            Source::Op(s) => write!(f, "op#{s}"),
        }
    }
}

/// Reuse class of one operand.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Class {
    /// The same tensor for every instance.
    Shared(Source),
    Batched,
}

impl Class {
    pub fn of(sources: &BTreeSet<Source>) -> Class {
        match sources.iter().next() {
            Some(s @ (Source::Param(_) | Source::Const(_))) if sources.len() == 1 => {
                Class::Shared(s.clone())
            }
            _ => Class::Batched,
        }
    }

    pub fn join(&self, other: &Class) -> Class {
        if self == other {
            self.clone()
        } else {
            Class::Batched
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, Class::Shared(_))
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Class::Shared(s) => write!(f, "SHARED({s})"),
            Class::Batched => write!(f, "BATCHED"),
        }
    }
}

/// A function together with the call site it was entered from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Ctx {
    pub func: String,
    pub site: SiteId,
}

impl fmt::Display for Ctx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.site == ROOT_SITE {
            write!(f, "@{}", self.func)
        } else {
            write!(f, "@{}<-{}", self.func, self.site)
        }
    }
}

/// Whether an operand feeds a prim-op or a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UseKind {
    Op,
    Call,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct OperandKey {
    pub ctx: Ctx,
    pub kind: UseKind,
    pub site: SiteId,
    pub arg: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Operand {
    pub key: OperandKey,
    /// Provenance: every source the operand may come from.
    pub sources: BTreeSet<Source>,
    pub class: Class,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ReuseReport {
    /// Reachable contexts.
    pub contexts: BTreeSet<Ctx>,
    pub operands: BTreeMap<OperandKey, Operand>,
    /// Functions never reached from the entry.
    pub skipped: Vec<String>,
}

impl ReuseReport {
    /// Classification of every operand in `ctx`, ordered by site and position.
    pub fn vector(&self, ctx: &Ctx) -> Vec<(UseKind, SiteId, usize, Class)> {
        self.operands
            .range(ctx_range(ctx))
            .map(|(k, o)| (k.kind, k.site, k.arg, o.class.clone()))
            .collect()
    }

    pub fn contexts_of<'a>(&'a self, func: &'a str) -> impl Iterator<Item = &'a Ctx> + 'a {
        self.contexts.iter().filter(move |c| c.func == func)
    }

    /// Prim-op operand class joined over every context of `func`.
    pub fn joined_op_class(&self, func: &str, site: SiteId, arg: usize) -> Class {
        let mut out: Option<Class> = None;
        for ctx in self.contexts_of(func) {
            let key = OperandKey {
                ctx: ctx.clone(),
                kind: UseKind::Op,
                site,
                arg,
            };
            if let Some(o) = self.operands.get(&key) {
                out = Some(match out {
                    None => o.class.clone(),
                    Some(c) => c.join(&o.class),
                });
            }
        }
        out.unwrap_or(Class::Batched)
    }

    /// Entry-function weights classified SHARED at a prim-op in some context
    /// of `func`.
    pub fn shared_params_in(&self, func: &str) -> BTreeSet<String> {
        self.operands
            .values()
            .filter(|o| o.key.ctx.func == func && o.key.kind == UseKind::Op)
            .filter_map(|o| match &o.class {
                Class::Shared(Source::Param(p)) => Some(p.clone()),
                _ => None,
            })
            .collect()
    }
}

fn ctx_range(ctx: &Ctx) -> std::ops::RangeInclusive<OperandKey> {
    let lo = OperandKey {
        ctx: ctx.clone(),
        kind: UseKind::Op,
        site: 0,
        arg: 0,
    };
    let hi = OperandKey {
        ctx: ctx.clone(),
        kind: UseKind::Call,
        site: SiteId::MAX,
        arg: usize::MAX,
    };
    lo..=hi
}

type Val = BTreeSet<Source>;

/// Function containing each call site.
pub(crate) fn call_site_owners(program: &Program) -> HashMap<SiteId, String> {
    let mut out = HashMap::new();
    for f in program.functions.values() {
        f.body.walk(&mut |e| {
            if let Expr::Call { site, .. } = e {
                out.insert(*site, f.name.clone());
            }
        });
    }
    out
}

/// Runs the reuse analysis on an A-normal-form program.
pub fn analyze_reuse(program: &Program) -> ReuseReport {
    let owners = call_site_owners(program);
    let mut a = Analyzer {
        program,
        params: HashMap::new(),
        rets: HashMap::new(),
        operands: BTreeMap::new(),
        dirty: Vec::new(),
    };
    let root = Ctx {
        func: program.entry.clone(),
        site: ROOT_SITE,
    };
    let entry_vals = program
        .params
        .iter()
        .map(|p| match p.kind {
            ParamKind::Weight => Val::from([Source::Param(p.name.clone())]),
            ParamKind::Input => Val::from([Source::Input]),
        })
        .collect();
    a.params.insert(root.clone(), entry_vals);
    let mut queue = VecDeque::from([root.clone()]);
    let mut queued: BTreeSet<Ctx> = BTreeSet::from([root]);
    while let Some(ctx) = queue.pop_front() {
        queued.remove(&ctx);
        a.eval_ctx(&ctx);
        for (changed, is_ret) in std::mem::take(&mut a.dirty) {
            if is_ret {
                if changed.site == ROOT_SITE {
                    continue;
                }
                // Every context of the function holding the call site reads
                // this return value.
                let owner = &owners[&changed.site];
                let readers: Vec<Ctx> = a
                    .params
                    .keys()
                    .filter(|c| &c.func == owner)
                    .cloned()
                    .collect();
                for r in readers {
                    if queued.insert(r.clone()) {
                        queue.push_back(r);
                    }
                }
            } else if queued.insert(changed.clone()) {
                queue.push_back(changed);
            }
        }
    }
    let contexts: BTreeSet<Ctx> = a.params.keys().cloned().collect();
    let reached: BTreeSet<&str> = contexts.iter().map(|c| c.func.as_str()).collect();
    ReuseReport {
        skipped: program
            .functions
            .keys()
            .filter(|f| !reached.contains(f.as_str()))
            .cloned()
            .collect(),
        contexts,
        operands: a.operands,
    }
}

struct Analyzer<'p> {
    program: &'p Program,
    params: HashMap<Ctx, Vec<Val>>,
    rets: HashMap<Ctx, Val>,
    operands: BTreeMap<OperandKey, Operand>,
    /// Contexts whose parameters (false) or return value (true) grew.
    dirty: Vec<(Ctx, bool)>,
}

impl Analyzer<'_> {
    fn eval_ctx(&mut self, ctx: &Ctx) {
        let f = &self.program.functions[&ctx.func];
        let mut env: HashMap<String, Val> = f
            .params
            .iter()
            .map(|p| p.name.clone())
            .zip(self.params[ctx].iter().cloned())
            .collect();
        let v = self.eval(ctx, &f.body, &mut env);
        let slot = self.rets.entry(ctx.clone()).or_default();
        if !v.is_subset(slot) {
            slot.extend(v);
            self.dirty.push((ctx.clone(), true));
        }
    }

    fn record(&mut self, ctx: &Ctx, kind: UseKind, site: SiteId, args: &[Val]) {
        for (i, v) in args.iter().enumerate() {
            let key = OperandKey {
                ctx: ctx.clone(),
                kind,
                site,
                arg: i,
            };
            self.operands.insert(
                key.clone(),
                Operand {
                    key,
                    sources: v.clone(),
                    class: Class::of(v),
                },
            );
        }
    }

    fn eval(&mut self, ctx: &Ctx, e: &Expr, env: &mut HashMap<String, Val>) -> Val {
        match e {
            Expr::Var(v) => env.get(v).cloned().unwrap_or_default(),
            Expr::ConstTensor { shape, fill } => Val::from([Source::Const(ConstKey::new(shape, fill.0))]),
            Expr::Int(_) | Expr::Float(_) => Val::new(),
            Expr::Let {
                name, bound, body, ..
            } => {
                let v = self.eval(ctx, bound, env);
                env.insert(name.clone(), v);
                self.eval(ctx, body, env)
            }
            Expr::PrimOp { site, args, .. } => {
                let vals: Vec<Val> = args.iter().map(|a| self.eval(ctx, a, env)).collect();
                self.record(ctx, UseKind::Op, *site, &vals);
                Val::from([Source::Op(*site)])
            }
            Expr::Call {
                site, callee, args, ..
            } => {
                let vals: Vec<Val> = args.iter().map(|a| self.eval(ctx, a, env)).collect();
                self.record(ctx, UseKind::Call, *site, &vals);
                let target = Ctx {
                    func: callee.clone(),
                    site: *site,
                };
                let slot = self
                    .params
                    .entry(target.clone())
                    .or_insert_with(|| vec![Val::new(); vals.len()]);
                let mut grew = !self.rets.contains_key(&target);
                for (s, v) in slot.iter_mut().zip(vals) {
                    if !v.is_subset(s) {
                        s.extend(v);
                        grew = true;
                    }
                }
                if grew {
                    self.dirty.push((target.clone(), false));
                }
                self.rets.get(&target).cloned().unwrap_or_default()
            }
            Expr::Map { lambda, lists, .. } => {
                for (p, l) in lambda.params.iter().zip(lists) {
                    let v = self.eval(ctx, l, env);
                    env.insert(p.name.clone(), v);
                }
                self.eval(ctx, &lambda.body, env)
            }
            Expr::Match { scrutinee, arms } => {
                let s = self.eval(ctx, scrutinee, env);
                let mut out = Val::new();
                for arm in arms {
                    if let Pattern::Ctor(_, binders) = &arm.pattern {
                        for b in binders {
                            env.insert(b.clone(), s.clone());
                        }
                    }
                    out.extend(self.eval(ctx, &arm.body, env));
                }
                out
            }
            Expr::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                self.eval(ctx, cond, env);
                let mut out = self.eval(ctx, then_branch, env);
                out.extend(self.eval(ctx, else_branch, env));
                out
            }
            Expr::Ctor(_, args) | Expr::Tuple(args) => {
                let mut out = Val::new();
                for a in args {
                    out.extend(self.eval(ctx, a, env));
                }
                out
            }
            Expr::Project(x, _) | Expr::ScalarOf(x) => self.eval(ctx, x, env),
            Expr::Binary(_, _, a, b) => {
                let mut out = self.eval(ctx, a, env);
                out.extend(self.eval(ctx, b, env));
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{Model, Size};

    fn report(m: Model) -> (TypedProgram, ReuseReport) {
        let t = infer_types(&m.program(Size::Small)).unwrap();
        let r = analyze_reuse(&t.program);
        (t, r)
    }

    #[test]
    fn rnn_weights_are_shared() {
        let (_, r) = report(Model::Rnn);
        let shared = r.shared_params_in("rnn");
        assert!(shared.contains("rnn_bias"));
        assert!(shared.contains("rnn_i_wt"));
        assert!(shared.contains("rnn_h_wt"));
        // the input operand of the first dense is per-instance
        let inputs = r
            .operands
            .values()
            .filter(|o| o.key.ctx.func == "rnn" && o.key.kind == UseKind::Op)
            .filter(|o| o.sources.contains(&Source::Input));
        assert!(inputs.clone().count() > 0);
        assert!(inputs.into_iter().all(|o| o.class == Class::Batched));
    }

    #[test]
    fn mvrnn_child_operands_are_batched() {
        let (_, r) = report(Model::Mvrnn);
        let mut n = 0;
        for o in r.operands.values() {
            if o.key.ctx.func == "mv" && o.key.kind == UseKind::Op {
                if o.sources.iter().any(|s| matches!(s, Source::Input)) {
                    assert_eq!(o.class, Class::Batched);
                    n += 1;
                }
            }
        }
        // ba and ab read both children
        assert!(n >= 4, "{n}");
    }

    #[test]
    fn constants_are_shared() {
        let p = parse_program(
            "def @main(input x: Tensor[(1, 2)]) { add(x, const((1, 2), 1.0)) }",
        )
        .unwrap();
        let t = infer_types(&p).unwrap();
        let r = analyze_reuse(&t.program);
        let classes: Vec<Class> = r.operands.values().map(|o| o.class.clone()).collect();
        assert_eq!(classes[0], Class::Batched);
        assert!(matches!(classes[1], Class::Shared(Source::Const(_))));
    }

    #[test]
    fn unreachable_functions_are_skipped() {
        let p = parse_program(
            "def @dead(x: Tensor[(1, 2)]) -> Tensor[(1, 2)] { tanh(x) }
             def @main(input x: Tensor[(1, 2)]) { sigmoid(x) }",
        )
        .unwrap();
        let r = analyze_reuse(&infer_types(&p).unwrap().program);
        assert_eq!(r.skipped, vec!["dead".to_string()]);
    }
}
