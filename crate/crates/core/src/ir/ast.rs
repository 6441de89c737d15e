//! Surface syntax tree for the functional tensor IR.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Program-wide identifier for a prim-op, call, map or conditional site.
pub type SiteId = u32;

/// Root context id used for the entry function.
pub const ROOT_SITE: SiteId = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub functions: BTreeMap<String, FuncDef>,
    pub entry: String,
    /// Declarations of the entry function's parameters, in order.
    pub params: Vec<ParamDecl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Model weight, shared by every instance of a mini-batch.
    Weight,
    /// Per-instance program input.
    Input,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub ty: Option<Type>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<ParamDecl>,
    pub ret: Option<Type>,
    pub body: Expr,
    pub annotations: Vec<Annotation>,
}

impl FuncDef {
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    ConcurrentCalls { group: u32, sites: Vec<SiteId> },
    Phase { phase: u32, stage: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Int,
    Float,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Type {
    Tensor(Vec<usize>),
    Scalar(ScalarKind),
    List(Box<Type>),
    Tree(Box<Type>),
    Tuple(Vec<Type>),
}

impl Type {
    pub fn tensor(shape: &[usize]) -> Type {
        Type::Tensor(shape.to_vec())
    }

    pub fn as_tensor(&self) -> Option<&[usize]> {
        match self {
            Type::Tensor(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Tensor(shape) => {
                write!(f, "Tensor[(")?;
                for (i, d) in shape.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{d}")?;
                }
                if shape.len() == 1 {
                    write!(f, ",")?;
                }
                write!(f, ")]")
            }
            Type::Scalar(ScalarKind::Int) => write!(f, "Int"),
            Type::Scalar(ScalarKind::Float) => write!(f, "Float"),
            Type::List(t) => write!(f, "List[{t}]"),
            Type::Tree(t) => write!(f, "Tree[{t}]"),
            Type::Tuple(ts) => {
                write!(f, "(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{t}")?;
                }
                if ts.len() == 1 {
                    write!(f, ",")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpCode {
    Dense,
    Add,
    BiasAdd,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Concat,
    Argmax,
}

impl OpCode {
    pub const ALL: [OpCode; 9] = [
        OpCode::Dense,
        OpCode::Add,
        OpCode::BiasAdd,
        OpCode::Mul,
        OpCode::Sigmoid,
        OpCode::Tanh,
        OpCode::Relu,
        OpCode::Concat,
        OpCode::Argmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpCode::Dense => "dense",
            OpCode::Add => "add",
            OpCode::BiasAdd => "bias_add",
            OpCode::Mul => "mul",
            OpCode::Sigmoid => "sigmoid",
            OpCode::Tanh => "tanh",
            OpCode::Relu => "relu",
            OpCode::Concat => "concat",
            OpCode::Argmax => "argmax",
        }
    }

    /// Accepts the bare name and the `nn.` prefixed spelling.
    pub fn from_name(s: &str) -> Option<OpCode> {
        let s = s.strip_prefix("nn.").unwrap_or(s);
        OpCode::ALL.into_iter().find(|op| op.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            OpCode::Dense | OpCode::Add | OpCode::BiasAdd | OpCode::Mul | OpCode::Concat => 2,
            OpCode::Sigmoid | OpCode::Tanh | OpCode::Relu | OpCode::Argmax => 1,
        }
    }

    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            OpCode::Add
                | OpCode::BiasAdd
                | OpCode::Mul
                | OpCode::Sigmoid
                | OpCode::Tanh
                | OpCode::Relu
        )
    }
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ctor {
    Nil,
    Cons,
    Leaf,
    Node,
}

impl Ctor {
    pub fn name(self) -> &'static str {
        match self {
            Ctor::Nil => "Nil",
            Ctor::Cons => "Cons",
            Ctor::Leaf => "Leaf",
            Ctor::Node => "Node",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Ctor::Nil => 0,
            Ctor::Leaf => 1,
            Ctor::Cons | Ctor::Node => 2,
        }
    }

    pub fn from_name(s: &str) -> Option<Ctor> {
        [Ctor::Nil, Ctor::Cons, Ctor::Leaf, Ctor::Node]
            .into_iter()
            .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    pub fn is_comparison(self) -> bool {
        !matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul)
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Mul => 3,
            BinOp::Add | BinOp::Sub => 2,
            _ => 1,
        }
    }
}

/// Float literal compared by bit pattern so that `Expr` can be `Eq`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct F32Lit(pub f32);

impl PartialEq for F32Lit {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for F32Lit {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lambda {
    pub params: Vec<ParamDecl>,
    pub body: Box<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    Wildcard,
    Ctor(Ctor, Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub pattern: Pattern,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Var(String),
    Let {
        name: String,
        /// Explicit `#[phase(n)]` annotation on a stage of the entry function.
        phase: Option<u32>,
        bound: Box<Expr>,
        body: Box<Expr>,
    },
    Call {
        site: SiteId,
        callee: String,
        args: Vec<Expr>,
        group: Option<u32>,
    },
    PrimOp {
        site: SiteId,
        op: OpCode,
        args: Vec<Expr>,
    },
    /// `@map(fn(..) { .. }, l1, .., ln)`; zips the lists.
    Map {
        site: SiteId,
        lambda: Lambda,
        lists: Vec<Expr>,
    },
    Match {
        scrutinee: Box<Expr>,
        arms: Vec<Arm>,
    },
    If {
        site: SiteId,
        cond: Box<Expr>,
        then_branch: Box<Expr>,
        else_branch: Box<Expr>,
    },
    Ctor(Ctor, Vec<Expr>),
    Tuple(Vec<Expr>),
    Project(Box<Expr>, usize),
    ConstTensor {
        shape: Vec<usize>,
        fill: F32Lit,
    },
    /// Requests the value of a one-element tensor; forces evaluation.
    ScalarOf(Box<Expr>),
    Int(i64),
    Float(F32Lit),
    /// Scalar arithmetic, or elementwise tensor `+`/`*` once types are known.
    Binary(SiteId, BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    /// Visits every sub-expression in pre-order, including lambda bodies.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Var(_) | Expr::ConstTensor { .. } | Expr::Int(_) | Expr::Float(_) => {}
            Expr::Let { bound, body, .. } => {
                bound.walk(f);
                body.walk(f);
            }
            Expr::Call { args, .. }
            | Expr::PrimOp { args, .. }
            | Expr::Ctor(_, args)
            | Expr::Tuple(args) => {
                for a in args {
                    a.walk(f);
                }
            }
            Expr::Map { lambda, lists, .. } => {
                lambda.body.walk(f);
                for l in lists {
                    l.walk(f);
                }
            }
            Expr::Match { scrutinee, arms } => {
                scrutinee.walk(f);
                for arm in arms {
                    arm.body.walk(f);
                }
            }
            Expr::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                cond.walk(f);
                then_branch.walk(f);
                else_branch.walk(f);
            }
            Expr::Project(e, _) | Expr::ScalarOf(e) => e.walk(f),
            Expr::Binary(_, _, a, b) => {
                a.walk(f);
                b.walk(f);
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Var(_) | Expr::ConstTensor { .. } | Expr::Int(_) | Expr::Float(_) => {}
            Expr::Let { bound, body, .. } => {
                bound.walk_mut(f);
                body.walk_mut(f);
            }
            Expr::Call { args, .. }
            | Expr::PrimOp { args, .. }
            | Expr::Ctor(_, args)
            | Expr::Tuple(args) => {
                for a in args {
                    a.walk_mut(f);
                }
            }
            Expr::Map { lambda, lists, .. } => {
                lambda.body.walk_mut(f);
                for l in lists {
                    l.walk_mut(f);
                }
            }
            Expr::Match { scrutinee, arms } => {
                scrutinee.walk_mut(f);
                for arm in arms {
                    arm.body.walk_mut(f);
                }
            }
            Expr::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                cond.walk_mut(f);
                then_branch.walk_mut(f);
                else_branch.walk_mut(f);
            }
            Expr::Project(e, _) | Expr::ScalarOf(e) => e.walk_mut(f),
            Expr::Binary(_, _, a, b) => {
                a.walk_mut(f);
                b.walk_mut(f);
            }
        }
    }

    /// True for expressions that ANF treats as atoms.
    pub fn is_atom(&self) -> bool {
        matches!(
            self,
            Expr::Var(_) | Expr::ConstTensor { .. } | Expr::Int(_) | Expr::Float(_)
        )
    }
}

impl Program {
    pub fn entry_fn(&self) -> &FuncDef {
        &self.functions[&self.entry]
    }

    /// Largest site id in use, or `None` for a program without sites.
    pub fn max_site(&self) -> Option<SiteId> {
        let mut max = None;
        for f in self.functions.values() {
            f.body.walk(&mut |e| {
                let s = match e {
                    Expr::Call { site, .. }
                    | Expr::PrimOp { site, .. }
                    | Expr::Map { site, .. }
                    | Expr::If { site, .. }
                    | Expr::Binary(site, ..) => *site,
                    _ => return,
                };
                max = Some(max.map_or(s, |m: SiteId| m.max(s)));
            });
        }
        max
    }

    pub fn weights(&self) -> impl Iterator<Item = &ParamDecl> {
        self.params.iter().filter(|p| p.kind == ParamKind::Weight)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ParamDecl> {
        self.params.iter().filter(|p| p.kind == ParamKind::Input)
    }
}
