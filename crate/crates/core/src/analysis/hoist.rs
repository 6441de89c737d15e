//! Static depth of prim-op units.
//!
//! A unit (a single op, or a block of ops) whose inputs do not depend on
//! recursion state can be scheduled at a depth fixed at compile time: 0 when
//! it only reads weights, inputs and constants, otherwise one more than the
//! deepest unit it reads from. Units on a dependence cycle through recursion
//! are dynamic.

use std::collections::HashMap;

use serde::Serialize;

use crate::ir::*;

/// Hoisting decision for one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum HoistClass {
    StaticDepth(u32),
    Dynamic,
}

impl HoistClass {
    pub fn is_static(self) -> bool {
        matches!(self, HoistClass::StaticDepth(_))
    }
}

/// Abstract depth of a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Depth {
    /// Not reached yet.
    Bot,
    /// Weight, input, constant or scalar literal.
    Leaf,
    At(u32),
    Dynamic,
}

impl Depth {
    fn join(self, other: Depth) -> Depth {
        use Depth::*;
        match (self, other) {
            (Bot, x) | (x, Bot) => x,
            (Dynamic, _) | (_, Dynamic) => Dynamic,
            (Leaf, x) | (x, Leaf) => x,
            (At(a), At(b)) => At(a.max(b)),
        }
    }
}

/// Computes the depth class of every unit. `unit_of` maps each prim-op
/// site to its unit; units flagged in `forced_dynamic` are dynamic
/// regardless of their inputs.
pub(crate) fn unit_depths(
    program: &Program,
    unit_of: &HashMap<SiteId, usize>,
    units: usize,
    forced_dynamic: &[bool],
) -> Vec<HoistClass> {
    let mut s = Solver {
        unit_of,
        forced_dynamic,
        cap: units as u32 + 1,
        params: HashMap::new(),
        rets: HashMap::new(),
        unit_in: vec![Depth::Bot; units],
        changed: false,
    };
    s.params.insert(
        program.entry.clone(),
        vec![Depth::Leaf; program.entry_fn().params.len()],
    );
    loop {
        s.changed = false;
        let reached: Vec<String> = s.params.keys().cloned().collect();
        for f in reached {
            let func = &program.functions[&f];
            let mut env: HashMap<String, (Depth, Option<usize>)> = func
                .params
                .iter()
                .zip(&s.params[&f])
                .map(|(p, d)| (p.name.clone(), (*d, None)))
                .collect();
            let r = s.eval(&func.body, &mut env);
            s.join_ret(&f, r);
        }
        if !s.changed {
            break;
        }
    }
    (0..units)
        .map(|u| match s.unit_value(u) {
            Depth::At(d) => HoistClass::StaticDepth(d),
            _ => HoistClass::Dynamic,
        })
        .collect()
}

struct Solver<'a> {
    unit_of: &'a HashMap<SiteId, usize>,
    forced_dynamic: &'a [bool],
    cap: u32,
    params: HashMap<String, Vec<Depth>>,
    rets: HashMap<String, Depth>,
    unit_in: Vec<Depth>,
    changed: bool,
}

impl Solver<'_> {
    fn unit_value(&self, u: usize) -> Depth {
        if self.forced_dynamic[u] {
            return Depth::Dynamic;
        }
        match self.unit_in[u] {
            Depth::Bot | Depth::Leaf => Depth::At(0),
            Depth::At(d) if d < self.cap => Depth::At(d + 1),
            _ => Depth::Dynamic,
        }
    }

    fn join_ret(&mut self, f: &str, d: Depth) {
        let slot = self.rets.entry(f.to_string()).or_insert(Depth::Bot);
        let j = slot.join(d);
        if j != *slot {
            *slot = j;
            self.changed = true;
        }
    }

    fn atom(&self, e: &Expr, env: &HashMap<String, (Depth, Option<usize>)>) -> (Depth, Option<usize>) {
        match e {
            Expr::Var(v) => env.get(v).copied().unwrap_or((Depth::Bot, None)),
            _ => (Depth::Leaf, None),
        }
    }

    fn eval(&mut self, e: &Expr, env: &mut HashMap<String, (Depth, Option<usize>)>) -> Depth {
        match e {
            Expr::Var(_) | Expr::ConstTensor { .. } | Expr::Int(_) | Expr::Float(_) => self.atom(e, env).0,
            Expr::Let {
                name, bound, body, ..
            } => {
                let v = match &**bound {
                    Expr::PrimOp { site, .. } => (self.eval(bound, env), Some(self.unit_of[site])),
                    _ => (self.eval(bound, env), None),
                };
                env.insert(name.clone(), v);
                self.eval(body, env)
            }
            Expr::PrimOp { site, args, .. } => {
                let u = self.unit_of[site];
                for a in args {
                    let (d, from) = self.atom(a, env);
                    if from == Some(u) {
                        continue;
                    }
                    let j = self.unit_in[u].join(d);
                    if j != self.unit_in[u] {
                        self.unit_in[u] = j;
                        self.changed = true;
                    }
                }
                self.unit_value(u)
            }
            Expr::Call { callee, args, .. } => {
                let vals: Vec<Depth> = args.iter().map(|a| self.eval(a, env)).collect();
                let slot = self
                    .params
                    .entry(callee.clone())
                    .or_insert_with(|| {
                        vec![Depth::Bot; vals.len()]
                    });
                for (s, v) in slot.iter_mut().zip(vals) {
                    let j = s.join(v);
                    if j != *s {
                        *s = j;
                        self.changed = true;
                    }
                }
                self.rets.get(callee).copied().unwrap_or(Depth::Bot)
            }
            Expr::Map { lambda, lists, .. } => {
                for (p, l) in lambda.params.iter().zip(lists) {
                    let d = self.eval(l, env);
                    env.insert(p.name.clone(), (d, None));
                }
                self.eval(&lambda.body, env)
            }
            Expr::Match { scrutinee, arms } => {
                let s = self.eval(scrutinee, env);
                let mut out = Depth::Bot;
                for arm in arms {
                    if let Pattern::Ctor(_, bs) = &arm.pattern {
                        for b in bs {
                            env.insert(b.clone(), (s, None));
                        }
                    }
                    out = out.join(self.eval(&arm.body, env));
                }
                out
            }
            Expr::If {
                cond,
                then_branch,
                else_branch,
                ..
            } => {
                self.eval(cond, env);
                let t = self.eval(then_branch, env);
                t.join(self.eval(else_branch, env))
            }
            Expr::Ctor(_, args) | Expr::Tuple(args) => {
                let mut out = Depth::Leaf;
                for a in args {
                    out = out.join(self.eval(a, env));
                }
                out
            }
            Expr::Project(x, _) | Expr::ScalarOf(x) => self.eval(x, env),
            Expr::Binary(_, _, a, b) => {
                let x = self.eval(a, env);
                x.join(self.eval(b, env))
            }
        }
    }
}

/// Per-op classification: each prim-op site is its own unit.
pub(crate) fn op_classes(program: &Program) -> HashMap<SiteId, HoistClass> {
    let mut sites = Vec::new();
    for f in program.functions.values() {
        f.body.walk(&mut |e| {
            if let Expr::PrimOp { site, .. } = e {
                sites.push(*site);
            }
        });
    }
    let unit_of: HashMap<SiteId, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let classes = unit_depths(program, &unit_of, sites.len(), &vec![false; sites.len()]);
    sites.into_iter().zip(classes).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{Model, Size};

    fn classes(m: Model) -> (Program, HashMap<SiteId, HoistClass>) {
        let t = infer_types(&m.program(Size::Small)).unwrap();
        let c = op_classes(&t.program);
        (t.program, c)
    }

    fn ops_in(p: &Program, f: &str) -> Vec<(OpCode, SiteId)> {
        let mut out = Vec::new();
        p.functions[f].body.walk(&mut |e| {
            if let Expr::PrimOp { site, op, .. } = e {
                out.push((*op, *site));
            }
        });
        out
    }

    #[test]
    fn rnn_input_transform_is_static() {
        let (p, c) = classes(Model::Rnn);
        let ops = ops_in(&p, "rnn");
        // dense(input, i_wt), add(bias, _)
        assert_eq!(c[&ops[0].1], HoistClass::StaticDepth(0));
        assert_eq!(c[&ops[1].1], HoistClass::StaticDepth(1));
        for (_, s) in &ops[2..] {
            assert_eq!(c[s], HoistClass::Dynamic);
        }
        for (_, s) in ops_in(&p, "main") {
            assert_eq!(c[&s], HoistClass::Dynamic);
        }
    }

    #[test]
    fn treelstm_leaf_transforms_are_static() {
        let (p, c) = classes(Model::Treelstm);
        let statics = ops_in(&p, "cell")
            .into_iter()
            .filter(|(_, s)| c[s].is_static())
            .count();
        assert_eq!(statics, 8);
    }

    #[test]
    fn constant_only_op_is_depth_zero() {
        let p = parse_program("def @main(input x: Tensor[(1, 2)]) { let c = sigmoid(const((1, 2), 1.0)); add(c, x) }").unwrap();
        let t = infer_types(&p).unwrap();
        let c = op_classes(&t.program);
        let ops = ops_in(&t.program, "main");
        assert_eq!(c[&ops[0].1], HoistClass::StaticDepth(0));
        assert_eq!(c[&ops[1].1], HoistClass::StaticDepth(1));
    }
}
