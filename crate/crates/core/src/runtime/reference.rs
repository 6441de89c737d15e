//! Unbatched reference interpreter over the source program.
//!
//! Runs one instance eagerly, op by op, with the host kernels. This is the
//! ground truth the batched runtime is compared against.

use std::rc::Rc;

use super::RuntimeError;
use crate::backend::kernels;
use crate::data::{Datum, HostTensor};
use crate::ir::*;

#[derive(Debug, Clone)]
enum RVal {
    Tensor(Rc<HostTensor>),
    Int(i64),
    Float(f32),
    Adt(Ctor, Rc<Vec<RVal>>),
    Tuple(Rc<Vec<RVal>>),
}

impl RVal {
    fn from_datum(d: &Datum) -> RVal {
        match d {
            Datum::Tensor(t) => RVal::Tensor(Rc::new(t.clone())),
            Datum::Int(i) => RVal::Int(*i),
            Datum::Float(f) => RVal::Float(f.0),
            Datum::Adt(c, xs) => RVal::Adt(*c, Rc::new(xs.iter().map(RVal::from_datum).collect())),
            Datum::Tuple(xs) => RVal::Tuple(Rc::new(xs.iter().map(RVal::from_datum).collect())),
        }
    }

    fn to_datum(&self) -> Datum {
        match self {
            RVal::Tensor(t) => Datum::Tensor((**t).clone()),
            RVal::Int(i) => Datum::Int(*i),
            RVal::Float(f) => Datum::float(*f),
            RVal::Adt(c, xs) => Datum::Adt(*c, xs.iter().map(RVal::to_datum).collect()),
            RVal::Tuple(xs) => Datum::Tuple(xs.iter().map(RVal::to_datum).collect()),
        }
    }

    fn tensor(&self) -> Result<&HostTensor, RuntimeError> {
        match self {
            RVal::Tensor(t) => Ok(t),
            other => Err(RuntimeError::Type(format!("expected a tensor, found {other:?}"))),
        }
    }
}

/// Collects a list value into its elements.
fn list_items(v: &RVal) -> Result<Vec<RVal>, RuntimeError> {
    let mut out = Vec::new();
    let mut cur = v.clone();
    loop {
        match cur {
            RVal::Adt(Ctor::Nil, _) => return Ok(out),
            RVal::Adt(Ctor::Cons, xs) => {
                out.push(xs[0].clone());
                cur = xs[1].clone();
            }
            other => return Err(RuntimeError::Type(format!("expected a list, found {other:?}"))),
        }
    }
}

fn make_list(items: Vec<RVal>) -> RVal {
    items
        .into_iter()
        .rev()
        .fold(RVal::Adt(Ctor::Nil, Rc::new(vec![])), |tail, h| {
            RVal::Adt(Ctor::Cons, Rc::new(vec![h, tail]))
        })
}

pub(crate) fn scalar_binary(op: BinOp, a: ScalarVal, b: ScalarVal) -> Result<ScalarVal, RuntimeError> {
    use ScalarVal::*;
    Ok(match (a, b) {
        (Int(x), Int(y)) => match op {
            BinOp::Add => Int(x.wrapping_add(y)),
            BinOp::Sub => Int(x.wrapping_sub(y)),
            BinOp::Mul => Int(x.wrapping_mul(y)),
            BinOp::Lt => Int((x < y) as i64),
            BinOp::Gt => Int((x > y) as i64),
            BinOp::Le => Int((x <= y) as i64),
            BinOp::Ge => Int((x >= y) as i64),
            BinOp::Eq => Int((x == y) as i64),
            BinOp::Ne => Int((x != y) as i64),
        },
        (Float(x), Float(y)) => match op {
            BinOp::Add => Float(x + y),
            BinOp::Sub => Float(x - y),
            BinOp::Mul => Float(x * y),
            BinOp::Lt => Int((x < y) as i64),
            BinOp::Gt => Int((x > y) as i64),
            BinOp::Le => Int((x <= y) as i64),
            BinOp::Ge => Int((x >= y) as i64),
            BinOp::Eq => Int((x == y) as i64),
            BinOp::Ne => Int((x != y) as i64),
        },
        (a, b) => return Err(RuntimeError::Type(format!("mixed scalar operands {a:?} {} {b:?}", op.symbol()))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ScalarVal {
    Int(i64),
    Float(f32),
}

impl ScalarVal {
    pub(crate) fn truthy(self) -> bool {
        match self {
            ScalarVal::Int(i) => i != 0,
            ScalarVal::Float(f) => f != 0.0,
        }
    }
}

struct Interp<'a> {
    program: &'a Program,
    env: Vec<(&'a str, RVal)>,
}

impl<'a> Interp<'a> {
    fn lookup(&self, name: &str) -> Result<RVal, RuntimeError> {
        self.env
            .iter()
            .rev()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| RuntimeError::Type(format!("unbound variable `{name}`")))
    }

    fn scalar(&self, v: RVal) -> Result<ScalarVal, RuntimeError> {
        match v {
            RVal::Int(i) => Ok(ScalarVal::Int(i)),
            RVal::Float(f) => Ok(ScalarVal::Float(f)),
            other => Err(RuntimeError::Type(format!("expected a scalar, found {other:?}"))),
        }
    }

    fn call(&mut self, callee: &str, args: Vec<RVal>) -> Result<RVal, RuntimeError> {
        let f = self
            .program
            .functions
            .get(callee)
            .ok_or_else(|| RuntimeError::Type(format!("unknown function @{callee}")))?;
        let saved = std::mem::take(&mut self.env);
        self.env.extend(f.param_names().zip(args));
        let r = self.eval(&f.body);
        self.env = saved;
        r
    }

    fn eval(&mut self, e: &'a Expr) -> Result<RVal, RuntimeError> {
        Ok(match e {
            Expr::Var(v) => self.lookup(v)?,
            Expr::Let { name, bound, body, .. } => {
                let v = self.eval(bound)?;
                let mark = self.env.len();
                self.env.push((name, v));
                let r = self.eval(body);
                self.env.truncate(mark);
                r?
            }
            Expr::Call { callee, args, .. } => {
                let args = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
                self.call(callee, args)?
            }
            Expr::PrimOp { op, args, .. } => {
                let vals = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
                self.prim(*op, &vals)?
            }
            Expr::Map { lambda, lists, .. } => {
                let lists = lists
                    .iter()
                    .map(|l| self.eval(l).and_then(|v| list_items(&v)))
                    .collect::<Result<Vec<_>, _>>()?;
                let n = lists.iter().map(Vec::len).min().unwrap_or(0);
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mark = self.env.len();
                    for (p, l) in lambda.params.iter().zip(&lists) {
                        self.env.push((&p.name, l[i].clone()));
                    }
                    let r = self.eval(&lambda.body);
                    self.env.truncate(mark);
                    out.push(r?);
                }
                make_list(out)
            }
            Expr::Match { scrutinee, arms } => {
                let v = self.eval(scrutinee)?;
                let RVal::Adt(c, fields) = &v else {
                    return Err(RuntimeError::Type(format!("match on non-ADT {v:?}")));
                };
                let arm = arms
                    .iter()
                    .find(|a| match &a.pattern {
                        Pattern::Wildcard => true,
                        Pattern::Ctor(k, _) => k == c,
                    })
                    .ok_or_else(|| RuntimeError::Type(format!("no arm matches {}", c.name())))?;
                let mark = self.env.len();
                if let Pattern::Ctor(_, binders) = &arm.pattern {
                    for (b, f) in binders.iter().zip(fields.iter()) {
                        self.env.push((b, f.clone()));
                    }
                }
                let r = self.eval(&arm.body);
                self.env.truncate(mark);
                r?
            }
            Expr::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                let c = self.eval(cond)?;
                if self.scalar(c)?.truthy() {
                    self.eval(then_branch)?
                } else {
                    self.eval(else_branch)?
                }
            }
            Expr::Ctor(c, args) => {
                let args = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
                RVal::Adt(*c, Rc::new(args))
            }
            Expr::Tuple(args) => {
                let args = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
                RVal::Tuple(Rc::new(args))
            }
            Expr::Project(x, i) => match self.eval(x)? {
                RVal::Tuple(xs) if *i < xs.len() => xs[*i].clone(),
                other => return Err(RuntimeError::Type(format!("projection .{i} of {other:?}"))),
            },
            Expr::ConstTensor { shape, fill } => RVal::Tensor(Rc::new(HostTensor::filled(shape, fill.0))),
            Expr::ScalarOf(x) => {
                let v = self.eval(x)?;
                let t = v.tensor()?;
                if t.data.len() != 1 {
                    return Err(RuntimeError::Type("scalar_of on a multi-element tensor".into()));
                }
                RVal::Float(t.data[0])
            }
            Expr::Int(i) => RVal::Int(*i),
            Expr::Float(f) => RVal::Float(f.0),
            Expr::Binary(_, op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                match (&a, &b) {
                    (RVal::Tensor(_), _) | (_, RVal::Tensor(_)) => {
                        let prim = match op {
                            BinOp::Add => OpCode::Add,
                            BinOp::Mul => OpCode::Mul,
                            _ => return Err(RuntimeError::Type(format!("tensor operator {}", op.symbol()))),
                        };
                        self.prim(prim, &[a, b])?
                    }
                    _ => match scalar_binary(*op, self.scalar(a)?, self.scalar(b)?)? {
                        ScalarVal::Int(i) => RVal::Int(i),
                        ScalarVal::Float(f) => RVal::Float(f),
                    },
                }
            }
        })
    }

    fn prim(&self, op: OpCode, vals: &[RVal]) -> Result<RVal, RuntimeError> {
        let ts = vals.iter().map(RVal::tensor).collect::<Result<Vec<_>, _>>()?;
        let data: Vec<&[f32]> = ts.iter().map(|t| t.data.as_slice()).collect();
        let shapes: Vec<&[usize]> = ts.iter().map(|t| t.shape.as_slice()).collect();
        let out = kernels::eval_op(op, &data, &shapes);
        Ok(match op {
            OpCode::Argmax => RVal::Int(out[0] as i64),
            OpCode::Dense => RVal::Tensor(Rc::new(HostTensor::new(vec![ts[0].shape[0], ts[1].shape[1]], out))),
            OpCode::Concat => RVal::Tensor(Rc::new(HostTensor::new(
                vec![ts[0].shape[0], ts[0].shape[1] + ts[1].shape[1]],
                out,
            ))),
            _ => RVal::Tensor(Rc::new(HostTensor::new(ts[0].shape.clone(), out))),
        })
    }
}

/// Evaluates the entry function for one instance. `weights` are matched to
/// weight parameters by name; `inputs` follow the order of the input
/// parameters.
pub fn interpret_reference(
    program: &Program,
    weights: &[(String, HostTensor)],
    inputs: &[Datum],
) -> Result<Datum, RuntimeError> {
    let mut inputs_iter = inputs.iter();
    let mut args = Vec::new();
    for p in &program.params {
        let v = match p.kind {
            ParamKind::Weight => {
                let (_, t) = weights
                    .iter()
                    .find(|(n, _)| *n == p.name)
                    .ok_or_else(|| RuntimeError::Input(format!("missing weight `{}`", p.name)))?;
                RVal::Tensor(Rc::new(t.clone()))
            }
            ParamKind::Input => RVal::from_datum(
                inputs_iter
                    .next()
                    .ok_or_else(|| RuntimeError::Input(format!("missing input `{}`", p.name)))?,
            ),
        };
        args.push(v);
    }
    let mut it = Interp {
        program,
        env: Vec::new(),
    };
    it.call(&program.entry, args).map(|v| v.to_datum())
}
