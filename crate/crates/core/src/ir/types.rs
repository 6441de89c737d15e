//! Unification-based type and shape inference.
//!
//! Functions are monomorphic. Untyped parameters get type variables that are
//! fixed by their uses; prim-op shape rules are solved once enough argument
//! shapes are known.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::anf;
use super::ast::*;
use super::IrError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnType {
    pub params: Vec<Type>,
    pub ret: Type,
}

/// A program in A-normal form together with the types of every variable,
/// site and function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedProgram {
    /// The program as parsed.
    pub source: Program,
    /// Uniquely named A-normal form of `source`.
    pub program: Program,
    pub fn_types: BTreeMap<String, FnType>,
    /// Per function, the type of every bound variable.
    pub var_types: BTreeMap<String, BTreeMap<String, Type>>,
    /// Result type of each call, prim-op, map, conditional and binary site.
    pub site_types: BTreeMap<SiteId, Type>,
    /// Top-level variables of the entry function mapped to the source stage
    /// they were derived from. The tail expression is stage `stage_count - 1`.
    pub main_stages: BTreeMap<String, usize>,
    pub stage_count: usize,
}

impl TypedProgram {
    pub fn var_type(&self, func: &str, var: &str) -> Option<&Type> {
        self.var_types.get(func)?.get(var)
    }

    pub fn entry_ret(&self) -> &Type {
        &self.fn_types[&self.program.entry].ret
    }

    /// Re-types a transformed program that is already in A-normal form,
    /// keeping the source and stage bookkeeping.
    pub fn retype(&self, program: Program) -> Result<TypedProgram, IrError> {
        let solved = Engine::run(&program)?;
        Ok(TypedProgram {
            source: self.source.clone(),
            program,
            fn_types: solved.fn_types,
            var_types: solved.var_types,
            site_types: solved.site_types,
            main_stages: self.main_stages.clone(),
            stage_count: self.stage_count,
        })
    }
}

pub fn infer_types(program: &Program) -> Result<TypedProgram, IrError> {
    let renamed = anf::uniquify(program);
    let first = Engine::run(&renamed)?;
    let (normal, main_stages, stage_count) = anf::normalize(&renamed, &first.tensor_binaries);
    let solved = Engine::run(&normal)?;
    Ok(TypedProgram {
        source: program.clone(),
        program: normal,
        fn_types: solved.fn_types,
        var_types: solved.var_types,
        site_types: solved.site_types,
        main_stages,
        stage_count,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Ty {
    Var(u32),
    Tensor(Vec<usize>),
    Scalar(ScalarKind),
    List(Box<Ty>),
    Tree(Box<Ty>),
    Tuple(Vec<Ty>),
}

impl Ty {
    fn from_type(t: &Type) -> Ty {
        match t {
            Type::Tensor(s) => Ty::Tensor(s.clone()),
            Type::Scalar(k) => Ty::Scalar(*k),
            Type::List(e) => Ty::List(Box::new(Ty::from_type(e))),
            Type::Tree(e) => Ty::Tree(Box::new(Ty::from_type(e))),
            Type::Tuple(ts) => Ty::Tuple(ts.iter().map(Ty::from_type).collect()),
        }
    }
}

enum Clash {
    Occurs,
    Mismatch,
}

#[derive(Debug, Clone)]
enum Pending {
    Prim {
        site: SiteId,
        op: OpCode,
        args: Vec<Ty>,
        out: Ty,
    },
    Binary {
        site: SiteId,
        op: BinOp,
        a: Ty,
        b: Ty,
        out: Ty,
    },
    Project {
        base: Ty,
        idx: usize,
        out: Ty,
    },
    ScalarOf {
        arg: Ty,
    },
}

enum Step {
    Done,
    Wait,
}

struct Solved {
    fn_types: BTreeMap<String, FnType>,
    var_types: BTreeMap<String, BTreeMap<String, Type>>,
    site_types: BTreeMap<SiteId, Type>,
    tensor_binaries: BTreeSet<SiteId>,
}

struct Engine {
    subst: Vec<Option<Ty>>,
    sigs: BTreeMap<String, (Vec<Ty>, Ty)>,
    pending: Vec<(String, Pending)>,
    vars: BTreeMap<String, BTreeMap<String, Ty>>,
    sites: BTreeMap<SiteId, Ty>,
    tensor_binaries: BTreeSet<SiteId>,
    func: String,
}

impl Engine {
    fn run(program: &Program) -> Result<Solved, IrError> {
        let mut e = Engine {
            subst: Vec::new(),
            sigs: BTreeMap::new(),
            pending: Vec::new(),
            vars: BTreeMap::new(),
            sites: BTreeMap::new(),
            tensor_binaries: BTreeSet::new(),
            func: String::new(),
        };
        for f in program.functions.values() {
            let params = f.params.iter().map(|p| e.declared(&p.ty)).collect();
            let ret = e.declared(&f.ret);
            e.sigs.insert(f.name.clone(), (params, ret));
        }
        for f in program.functions.values() {
            e.func = f.name.clone();
            let (params, ret) = e.sigs[&f.name].clone();
            let mut env = Vec::new();
            for (p, t) in f.params.iter().zip(params) {
                e.bind(&mut env, &p.name, t);
            }
            let body = e.expr(&f.body, &mut env)?;
            e.unify(&ret, &body, || format!("return value of @{}", f.name))?;
        }
        e.solve_pending()?;
        e.finish(program)
    }

    fn fresh(&mut self) -> Ty {
        self.subst.push(None);
        Ty::Var(self.subst.len() as u32 - 1)
    }

    fn declared(&mut self, t: &Option<Type>) -> Ty {
        match t {
            Some(t) => Ty::from_type(t),
            None => self.fresh(),
        }
    }

    fn bind(&mut self, env: &mut Vec<(String, Ty)>, name: &str, t: Ty) {
        if name != "_" {
            self.vars
                .entry(self.func.clone())
                .or_default()
                .insert(name.to_string(), t.clone());
        }
        env.push((name.to_string(), t));
    }

    fn shallow(&self, t: &Ty) -> Ty {
        let mut t = t.clone();
        while let Ty::Var(v) = t {
            match &self.subst[v as usize] {
                Some(next) => t = next.clone(),
                None => break,
            }
        }
        t
    }

    fn zonk(&self, t: &Ty) -> Ty {
        match self.shallow(t) {
            Ty::List(e) => Ty::List(Box::new(self.zonk(&e))),
            Ty::Tree(e) => Ty::Tree(Box::new(self.zonk(&e))),
            Ty::Tuple(ts) => Ty::Tuple(ts.iter().map(|t| self.zonk(t)).collect()),
            other => other,
        }
    }

    fn show(&self, t: &Ty) -> String {
        match self.zonk(t) {
            Ty::Var(_) => "_".into(),
            Ty::Tensor(s) => Type::Tensor(s).to_string(),
            Ty::Scalar(k) => Type::Scalar(k).to_string(),
            Ty::List(e) => format!("List[{}]", self.show(&e)),
            Ty::Tree(e) => format!("Tree[{}]", self.show(&e)),
            Ty::Tuple(ts) => {
                let items: Vec<String> = ts.iter().map(|t| self.show(t)).collect();
                format!("({})", items.join(", "))
            }
        }
    }

    fn occurs(&self, v: u32, t: &Ty) -> bool {
        match self.shallow(t) {
            Ty::Var(w) => v == w,
            Ty::List(e) | Ty::Tree(e) => self.occurs(v, &e),
            Ty::Tuple(ts) => ts.iter().any(|t| self.occurs(v, t)),
            _ => false,
        }
    }

    fn unify_raw(&mut self, a: &Ty, b: &Ty) -> Result<(), Clash> {
        let (a, b) = (self.shallow(a), self.shallow(b));
        match (&a, &b) {
            (Ty::Var(x), Ty::Var(y)) if x == y => Ok(()),
            (Ty::Var(x), other) | (other, Ty::Var(x)) => {
                if self.occurs(*x, other) {
                    return Err(Clash::Occurs);
                }
                self.subst[*x as usize] = Some(other.clone());
                Ok(())
            }
            (Ty::Tensor(x), Ty::Tensor(y)) if x == y => Ok(()),
            (Ty::Scalar(x), Ty::Scalar(y)) if x == y => Ok(()),
            (Ty::List(x), Ty::List(y)) | (Ty::Tree(x), Ty::Tree(y)) => self.unify_raw(x, y),
            (Ty::Tuple(xs), Ty::Tuple(ys)) if xs.len() == ys.len() => {
                for (x, y) in xs.iter().zip(ys) {
                    self.unify_raw(x, y)?;
                }
                Ok(())
            }
            _ => Err(Clash::Mismatch),
        }
    }

    fn unify(&mut self, a: &Ty, b: &Ty, context: impl FnOnce() -> String) -> Result<(), IrError> {
        match self.unify_raw(a, b) {
            Ok(()) => Ok(()),
            Err(Clash::Occurs) => Err(IrError::InfiniteType {
                func: self.func.clone(),
                detail: format!("{} would contain itself ({})", self.show(a), context()),
            }),
            Err(Clash::Mismatch) => Err(IrError::TypeMismatch {
                context: format!("@{}: {}", self.func, context()),
                expected: self.show(a),
                actual: self.show(b),
            }),
        }
    }

    fn lookup(&self, env: &[(String, Ty)], name: &str) -> Result<Ty, IrError> {
        env.iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| IrError::UnboundVariable {
                name: name.to_string(),
                func: self.func.clone(),
            })
    }

    fn defer(&mut self, p: Pending) -> Result<(), IrError> {
        match self.step(&p)? {
            Step::Done => Ok(()),
            Step::Wait => {
                self.pending.push((self.func.clone(), p));
                Ok(())
            }
        }
    }

    fn expr(&mut self, e: &Expr, env: &mut Vec<(String, Ty)>) -> Result<Ty, IrError> {
        Ok(match e {
            Expr::Var(v) => self.lookup(env, v)?,
            Expr::Int(_) => Ty::Scalar(ScalarKind::Int),
            Expr::Float(_) => Ty::Scalar(ScalarKind::Float),
            Expr::ConstTensor { shape, .. } => Ty::Tensor(shape.clone()),
            Expr::Let {
                name, bound, body, ..
            } => {
                let t = self.expr(bound, env)?;
                let mark = env.len();
                self.bind(env, name, t);
                let r = self.expr(body, env)?;
                env.truncate(mark);
                r
            }
            Expr::Call {
                site, callee, args, ..
            } => {
                let (params, ret) =
                    self.sigs
                        .get(callee)
                        .cloned()
                        .ok_or_else(|| IrError::UnknownIdentifier {
                            name: format!("@{callee}"),
                            context: format!("@{}", self.func),
                        })?;
                if params.len() != args.len() {
                    return Err(IrError::Arity {
                        op: format!("@{callee}"),
                        expected: params.len(),
                        actual: args.len(),
                    });
                }
                for (i, (p, a)) in params.iter().zip(args).enumerate() {
                    let t = self.expr(a, env)?;
                    self.unify(p, &t, || format!("argument {i} of @{callee}"))?;
                }
                self.sites.insert(*site, ret.clone());
                ret
            }
            Expr::PrimOp { site, op, args } => {
                if args.len() != op.arity() {
                    return Err(IrError::Arity {
                        op: op.name().into(),
                        expected: op.arity(),
                        actual: args.len(),
                    });
                }
                let mut ts = Vec::new();
                for a in args {
                    ts.push(self.expr(a, env)?);
                }
                let out = self.fresh();
                self.sites.insert(*site, out.clone());
                self.defer(Pending::Prim {
                    site: *site,
                    op: *op,
                    args: ts,
                    out: out.clone(),
                })?;
                out
            }
            Expr::Map {
                site,
                lambda,
                lists,
            } => {
                if lambda.params.len() != lists.len() {
                    return Err(IrError::Arity {
                        op: "@map".into(),
                        expected: lambda.params.len() + 1,
                        actual: lists.len() + 1,
                    });
                }
                let mark = env.len();
                let mut elems = Vec::new();
                for (i, l) in lists.iter().enumerate() {
                    let lt = self.expr(l, env)?;
                    let el = self.declared(&lambda.params[i].ty);
                    self.unify(&lt, &Ty::List(Box::new(el.clone())), || {
                        format!("list {i} of @map")
                    })?;
                    elems.push(el);
                }
                for (p, el) in lambda.params.iter().zip(elems) {
                    self.bind(env, &p.name, el);
                }
                let body = self.expr(&lambda.body, env)?;
                env.truncate(mark);
                let out = Ty::List(Box::new(body));
                self.sites.insert(*site, out.clone());
                out
            }
            Expr::Match { scrutinee, arms } => {
                let st = self.expr(scrutinee, env)?;
                let mut result: Option<Ty> = None;
                for arm in arms {
                    let mark = env.len();
                    if let Pattern::Ctor(c, binders) = &arm.pattern {
                        let el = self.fresh();
                        let (outer, fields) = match c {
                            Ctor::Nil => (Ty::List(Box::new(el.clone())), vec![]),
                            Ctor::Cons => (
                                Ty::List(Box::new(el.clone())),
                                vec![el.clone(), Ty::List(Box::new(el))],
                            ),
                            Ctor::Leaf => (Ty::Tree(Box::new(el.clone())), vec![el]),
                            Ctor::Node => {
                                let t = Ty::Tree(Box::new(el));
                                (t.clone(), vec![t.clone(), t])
                            }
                        };
                        self.unify(&st, &outer, || format!("pattern {}", c.name()))?;
                        for (b, t) in binders.iter().zip(fields) {
                            self.bind(env, b, t);
                        }
                    }
                    let bt = self.expr(&arm.body, env)?;
                    env.truncate(mark);
                    match &result {
                        Some(r) => {
                            let r = r.clone();
                            self.unify(&r, &bt, || "match arms".into())?
                        }
                        None => result = Some(bt),
                    }
                }
                result.unwrap_or_else(|| self.fresh())
            }
            Expr::If {
                site,
                cond,
                then_branch,
                else_branch,
            } => {
                let ct = self.expr(cond, env)?;
                self.unify(&Ty::Scalar(ScalarKind::Int), &ct, || "if condition".into())?;
                let a = self.expr(then_branch, env)?;
                let b = self.expr(else_branch, env)?;
                self.unify(&a, &b, || "if branches".into())?;
                self.sites.insert(*site, a.clone());
                a
            }
            Expr::Ctor(c, args) => {
                let mut ts = Vec::new();
                for a in args {
                    ts.push(self.expr(a, env)?);
                }
                match c {
                    Ctor::Nil => {
                        let el = self.fresh();
                        Ty::List(Box::new(el))
                    }
                    Ctor::Cons => {
                        let t = Ty::List(Box::new(ts[0].clone()));
                        self.unify(&t, &ts[1], || "Cons tail".into())?;
                        t
                    }
                    Ctor::Leaf => Ty::Tree(Box::new(ts[0].clone())),
                    Ctor::Node => {
                        let el = self.fresh();
                        let t = Ty::Tree(Box::new(el));
                        self.unify(&t, &ts[0], || "Node left".into())?;
                        self.unify(&t, &ts[1], || "Node right".into())?;
                        t
                    }
                }
            }
            Expr::Tuple(items) => {
                let mut ts = Vec::new();
                for a in items {
                    ts.push(self.expr(a, env)?);
                }
                Ty::Tuple(ts)
            }
            Expr::Project(base, idx) => {
                let bt = self.expr(base, env)?;
                let out = self.fresh();
                self.defer(Pending::Project {
                    base: bt,
                    idx: *idx,
                    out: out.clone(),
                })?;
                out
            }
            Expr::ScalarOf(x) => {
                let t = self.expr(x, env)?;
                self.defer(Pending::ScalarOf { arg: t })?;
                Ty::Scalar(ScalarKind::Float)
            }
            Expr::Binary(site, op, a, b) => {
                let ta = self.expr(a, env)?;
                let tb = self.expr(b, env)?;
                let out = self.fresh();
                self.sites.insert(*site, out.clone());
                self.defer(Pending::Binary {
                    site: *site,
                    op: *op,
                    a: ta,
                    b: tb,
                    out: out.clone(),
                })?;
                out
            }
        })
    }

    fn tensor_arg(&self, op: &str, t: &Ty) -> Result<Option<Vec<usize>>, IrError> {
        match self.shallow(t) {
            Ty::Var(_) => Ok(None),
            Ty::Tensor(s) => Ok(Some(s)),
            other => Err(IrError::TypeMismatch {
                context: format!("@{}: argument of {op}", self.func),
                expected: "Tensor".into(),
                actual: self.show(&other),
            }),
        }
    }

    fn shape_err(&self, op: &str, expected: String, actual: String) -> IrError {
        IrError::ShapeMismatch {
            op: op.to_string(),
            expected,
            actual,
        }
    }

    fn step(&mut self, p: &Pending) -> Result<Step, IrError> {
        match p {
            Pending::Prim { op, args, out, .. } => self.step_prim(*op, args, out),
            Pending::Binary {
                site,
                op,
                a,
                b,
                out,
            } => {
                let (ra, rb) = (self.shallow(a), self.shallow(b));
                let tensor = matches!(ra, Ty::Tensor(_)) || matches!(rb, Ty::Tensor(_));
                let scalar = matches!(ra, Ty::Scalar(_)) || matches!(rb, Ty::Scalar(_));
                if tensor {
                    let prim = match op {
                        BinOp::Add => OpCode::Add,
                        BinOp::Mul => OpCode::Mul,
                        _ => {
                            return Err(IrError::TypeMismatch {
                                context: format!("@{}: operator {}", self.func, op.symbol()),
                                expected: "Int or Float operands".into(),
                                actual: self.show(a),
                            })
                        }
                    };
                    self.tensor_binaries.insert(*site);
                    self.step_prim(prim, &[a.clone(), b.clone()], out)
                } else if scalar {
                    self.unify(a, b, || format!("operands of {}", op.symbol()))?;
                    let r = if op.is_comparison() {
                        Ty::Scalar(ScalarKind::Int)
                    } else {
                        self.shallow(a)
                    };
                    self.unify(out, &r, || format!("result of {}", op.symbol()))?;
                    Ok(Step::Done)
                } else {
                    match (&ra, &rb) {
                        (Ty::Var(_), _) | (_, Ty::Var(_)) => Ok(Step::Wait),
                        _ => Err(IrError::TypeMismatch {
                            context: format!("@{}: operator {}", self.func, op.symbol()),
                            expected: "scalar or tensor operands".into(),
                            actual: self.show(&ra),
                        }),
                    }
                }
            }
            Pending::Project { base, idx, out } => match self.shallow(base) {
                Ty::Var(_) => Ok(Step::Wait),
                Ty::Tuple(ts) if *idx < ts.len() => {
                    let t = ts[*idx].clone();
                    self.unify(out, &t, || format!("projection .{idx}"))?;
                    Ok(Step::Done)
                }
                other => Err(IrError::TypeMismatch {
                    context: format!("@{}: projection .{idx}", self.func),
                    expected: format!("tuple of at least {} elements", idx + 1),
                    actual: self.show(&other),
                }),
            },
            Pending::ScalarOf { arg } => match self.tensor_arg("scalar_of", arg)? {
                None => Ok(Step::Wait),
                Some(s) if s.iter().product::<usize>() == 1 => Ok(Step::Done),
                Some(s) => {
                    Err(self.shape_err("scalar_of", "one-element tensor".into(), fmt_shape(&s)))
                }
            },
        }
    }

    fn step_prim(&mut self, op: OpCode, args: &[Ty], out: &Ty) -> Result<Step, IrError> {
        let name = op.name();
        match op {
            OpCode::Sigmoid | OpCode::Tanh | OpCode::Relu => {
                self.unify(out, &args[0], || name.to_string())?;
                Ok(match self.tensor_arg(name, &args[0])? {
                    Some(_) => Step::Done,
                    None => Step::Wait,
                })
            }
            OpCode::Add | OpCode::BiasAdd | OpCode::Mul => {
                let a = self.tensor_arg(name, &args[0])?;
                let b = self.tensor_arg(name, &args[1])?;
                let known = match (a, b) {
                    (Some(x), Some(y)) => {
                        if x != y {
                            return Err(self.shape_err(name, fmt_shape(&x), fmt_shape(&y)));
                        }
                        x
                    }
                    (Some(x), None) | (None, Some(x)) => x,
                    (None, None) => {
                        self.unify(&args[0], &args[1], || name.to_string())?;
                        self.unify(out, &args[0], || name.to_string())?;
                        return Ok(Step::Wait);
                    }
                };
                let t = Ty::Tensor(known);
                self.unify(&args[0], &t, || name.to_string())?;
                self.unify(&args[1], &t, || name.to_string())?;
                self.unify(out, &t, || name.to_string())?;
                Ok(Step::Done)
            }
            OpCode::Dense | OpCode::Concat => {
                let (Some(a), Some(b)) = (
                    self.tensor_arg(name, &args[0])?,
                    self.tensor_arg(name, &args[1])?,
                ) else {
                    return Ok(Step::Wait);
                };
                if a.len() != 2 || b.len() != 2 {
                    return Err(self.shape_err(
                        name,
                        "two rank-2 tensors".into(),
                        format!("{} and {}", fmt_shape(&a), fmt_shape(&b)),
                    ));
                }
                let r = if op == OpCode::Dense {
                    if a[1] != b[0] {
                        return Err(self.shape_err(
                            name,
                            format!("({}, {}) x ({}, _)", a[0], a[1], a[1]),
                            format!("{} x {}", fmt_shape(&a), fmt_shape(&b)),
                        ));
                    }
                    vec![a[0], b[1]]
                } else {
                    if a[0] != b[0] {
                        return Err(self.shape_err(
                            name,
                            format!("({}, _) and ({}, _)", a[0], a[0]),
                            format!("{} and {}", fmt_shape(&a), fmt_shape(&b)),
                        ));
                    }
                    vec![a[0], a[1] + b[1]]
                };
                self.unify(out, &Ty::Tensor(r), || name.to_string())?;
                Ok(Step::Done)
            }
            OpCode::Argmax => {
                self.unify(out, &Ty::Scalar(ScalarKind::Int), || name.to_string())?;
                match self.tensor_arg(name, &args[0])? {
                    None => Ok(Step::Wait),
                    Some(s) if s.len() == 2 && s[0] == 1 => Ok(Step::Done),
                    Some(s) => Err(self.shape_err(name, "(1, n)".into(), fmt_shape(&s))),
                }
            }
        }
    }

    fn solve_pending(&mut self) -> Result<(), IrError> {
        loop {
            let work = std::mem::take(&mut self.pending);
            let before = work.len();
            let mut left = Vec::new();
            for (func, p) in work {
                self.func = func.clone();
                if let Step::Wait = self.step(&p)? {
                    left.push((func, p));
                }
            }
            let stuck = left.len() == before;
            self.pending = left;
            if self.pending.is_empty() {
                return Ok(());
            }
            if stuck {
                let (func, p) = &self.pending[0];
                let what = match p {
                    Pending::Prim { site, op, .. } => format!("{} at site {site}", op.name()),
                    Pending::Binary { site, op, .. } => {
                        format!("operator {} at site {site}", op.symbol())
                    }
                    Pending::Project { idx, .. } => format!("projection .{idx}"),
                    Pending::ScalarOf { .. } => "scalar_of argument".into(),
                };
                return Err(IrError::Ambiguous {
                    what,
                    func: func.clone(),
                });
            }
        }
    }

    fn ground(&self, t: &Ty, what: impl FnOnce() -> String, func: &str) -> Result<Type, IrError> {
        fn go(e: &Engine, t: &Ty) -> Option<Type> {
            Some(match e.shallow(t) {
                Ty::Var(_) => return None,
                Ty::Tensor(s) => Type::Tensor(s),
                Ty::Scalar(k) => Type::Scalar(k),
                Ty::List(x) => Type::List(Box::new(go(e, &x)?)),
                Ty::Tree(x) => Type::Tree(Box::new(go(e, &x)?)),
                Ty::Tuple(ts) => Type::Tuple(ts.iter().map(|t| go(e, t)).collect::<Option<_>>()?),
            })
        }
        go(self, t).ok_or_else(|| IrError::Ambiguous {
            what: what(),
            func: func.to_string(),
        })
    }

    fn finish(self, program: &Program) -> Result<Solved, IrError> {
        let mut fn_types = BTreeMap::new();
        for (name, (params, ret)) in &self.sigs {
            let f = &program.functions[name];
            let mut ps = Vec::new();
            for (p, t) in f.params.iter().zip(params) {
                ps.push(self.ground(t, || format!("parameter `{}`", p.name), name)?);
            }
            let ret = self.ground(ret, || "the return value".into(), name)?;
            fn_types.insert(name.clone(), FnType { params: ps, ret });
        }
        let mut var_types = BTreeMap::new();
        for (func, vars) in &self.vars {
            let mut m = BTreeMap::new();
            for (v, t) in vars {
                m.insert(v.clone(), self.ground(t, || format!("`{v}`"), func)?);
            }
            var_types.insert(func.clone(), m);
        }
        let mut site_types = BTreeMap::new();
        for (s, t) in &self.sites {
            site_types.insert(*s, self.ground(t, || format!("site {s}"), &program.entry)?);
        }
        Ok(Solved {
            fn_types,
            var_types,
            site_types,
            tensor_binaries: self.tensor_binaries,
        })
    }
}

fn fmt_shape(s: &[usize]) -> String {
    Type::Tensor(s.to_vec()).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn typed(src: &str) -> Result<TypedProgram, IrError> {
        infer_types(&parse_program(src).unwrap())
    }

    #[test]
    fn dense_row_vector() {
        let t =
            typed("def @main(x: Tensor[(1, 256)], w: Tensor[(256, 256)]) { dense(x, w) }").unwrap();
        assert_eq!(t.entry_ret(), &Type::tensor(&[1, 256]));
    }

    #[test]
    fn add_shape_mismatch() {
        let err =
            typed("def @main(a: Tensor[(1, 256)], b: Tensor[(1, 128)]) { add(a, b) }").unwrap_err();
        assert!(
            matches!(err, IrError::ShapeMismatch { ref op, .. } if op == "add"),
            "{err}"
        );
    }

    #[test]
    fn concat_and_argmax() {
        let t = typed(
            "def @main(a: Tensor[(1, 3)], b: Tensor[(1, 5)]) { let c = concat(a, b); (c, argmax(c)) }",
        )
        .unwrap();
        assert_eq!(
            t.entry_ret(),
            &Type::Tuple(vec![Type::tensor(&[1, 8]), Type::Scalar(ScalarKind::Int)])
        );
    }

    #[test]
    fn untyped_helper_gets_types_from_caller() {
        let t = typed(
            "def @f(x, w) { sigmoid(dense(x, w)) }
             def @main(x: Tensor[(1, 4)], w: Tensor[(4, 2)]) { @f(x, w) }",
        )
        .unwrap();
        assert_eq!(t.fn_types["f"].ret, Type::tensor(&[1, 2]));
    }

    #[test]
    fn tensor_plus_becomes_add() {
        let t = typed("def @main(a: Tensor[(1, 2)], b: Tensor[(1, 2)]) { a + b }").unwrap();
        let mut ops = Vec::new();
        t.program.entry_fn().body.walk(&mut |e| {
            if let Expr::PrimOp { op, .. } = e {
                ops.push(*op);
            }
        });
        assert_eq!(ops, vec![OpCode::Add]);
    }

    #[test]
    fn infinite_type() {
        let err = typed("def @f(x) { Cons(x, x) } def @main(a: Int) { @f(a) }").unwrap_err();
        assert!(matches!(err, IrError::InfiniteType { .. }), "{err}");
    }

    #[test]
    fn scalar_comparison_is_int() {
        let t = typed("def @main(a: Tensor[(1, 1)]) { if scalar_of(a) > 0.5 { 1 } else { 0 } }")
            .unwrap();
        assert_eq!(t.entry_ret(), &Type::Scalar(ScalarKind::Int));
    }
}
