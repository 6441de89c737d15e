//! Grouping of prim-ops into static blocks.
//!
//! A region is a run of consecutive prim-op lets in one straight-line
//! sequence. Lets that only move data around (tuples, projections,
//! constructors, scalar arithmetic) may sit inside a region as long as they
//! do not read a result of the region; they are evaluated before the
//! region's blocks. Within a region, ops are split by hoisting class and
//! each connected component becomes one block.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::hoist::{op_classes, unit_depths, HoistClass};
use super::taint::{Class, ConstKey, ReuseReport, Source};
use crate::ir::annotations::{free_vars, let_chains};
use crate::ir::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoarsenOptions {
    pub coarsen: bool,
    pub hfuse: bool,
    pub hoist: bool,
}

impl Default for CoarsenOptions {
    fn default() -> Self {
        CoarsenOptions {
            coarsen: true,
            hfuse: true,
            hoist: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BlockArg {
    Input(usize),
    Op(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockOp {
    pub site: SiteId,
    pub op: OpCode,
    /// Variable bound to the result.
    pub name: String,
    pub args: Vec<BlockArg>,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum InputAtom {
    Var(String),
    Const(ConstKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockInput {
    pub atom: InputAtom,
    pub shape: Vec<usize>,
    /// Reuse class joined over every context of the owning function.
    pub class: Class,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StaticBlock {
    pub id: usize,
    pub func: String,
    pub ops: Vec<BlockOp>,
    pub inputs: Vec<BlockInput>,
    /// Ops whose results are read outside the block.
    pub outputs: Vec<usize>,
    /// Groups of dense ops computed as one stacked dense.
    pub stacks: Vec<Vec<usize>>,
    pub hoist: HoistClass,
}

/// Placement of the blocks of one region in its let sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Region {
    pub func: String,
    /// Every let of the region, in source order.
    pub lets: Vec<String>,
    /// Data-movement lets evaluated before the blocks.
    pub pass: Vec<String>,
    /// Blocks in a valid execution order.
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Coarsening {
    pub blocks: Vec<StaticBlock>,
    pub regions: Vec<Region>,
    pub block_of_site: BTreeMap<SiteId, usize>,
}

impl Coarsening {
    /// Region starting at the let named `first` in `func`.
    pub fn region_at(&self, func: &str, first: &str) -> Option<&Region> {
        self.regions
            .iter()
            .find(|r| r.func == func && r.lets.first().is_some_and(|l| l == first))
    }
}

fn passthrough(e: &Expr) -> bool {
    matches!(
        e,
        Expr::Var(_)
            | Expr::ConstTensor { .. }
            | Expr::Int(_)
            | Expr::Float(_)
            | Expr::Ctor(..)
            | Expr::Tuple(_)
            | Expr::Project(..)
            | Expr::Binary(..)
    )
}

fn use_counts(e: &Expr) -> HashMap<&str, usize> {
    let mut out = HashMap::new();
    e.walk(&mut |x| {
        if let Expr::Var(v) = x {
            *out.entry(v.as_str()).or_insert(0) += 1;
        }
    });
    out
}

struct RawRegion<'a> {
    lets: Vec<(&'a str, &'a Expr)>,
}

fn regions_of<'a>(f: &'a FuncDef, stages: Option<&BTreeMap<String, usize>>) -> Vec<RawRegion<'a>> {
    let mut out = Vec::new();
    for chain in let_chains(&f.body) {
        let mut cur: Vec<(&str, &Expr)> = Vec::new();
        let mut produced: Vec<&str> = Vec::new();
        let mut stage = None;
        for (name, bound) in chain {
            let s = stages.and_then(|m| m.get(name).copied());
            let same_stage = cur.is_empty() || s == stage;
            let is_op = matches!(bound, Expr::PrimOp { .. });
            if is_op && same_stage {
                if cur.is_empty() {
                    stage = s;
                }
                cur.push((name, bound));
                produced.push(name);
                continue;
            }
            if !cur.is_empty()
                && same_stage
                && passthrough(bound)
                && free_vars(bound).iter().all(|v| !produced.contains(v))
            {
                cur.push((name, bound));
                continue;
            }
            if !cur.is_empty() {
                out.push(RawRegion {
                    lets: std::mem::take(&mut cur),
                });
                produced.clear();
            }
            if is_op {
                stage = s;
                cur.push((name, bound));
                produced.push(name);
            }
        }
        if !cur.is_empty() {
            out.push(RawRegion { lets: cur });
        }
    }
    // trailing data-movement lets belong after the region, not inside it
    for r in &mut out {
        while r.lets.last().is_some_and(|(_, b)| !matches!(b, Expr::PrimOp { .. })) {
            r.lets.pop();
        }
    }
    out
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let n = parent[c];
        parent[c] = r;
        c = n;
    }
    r
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Builds the blocks of every function in `typed.program`.
pub fn coarsen(typed: &TypedProgram, reuse: &ReuseReport, opts: CoarsenOptions) -> Coarsening {
    let program = &typed.program;
    // the split by hoisting class happens either way; the toggle only
    // decides whether static blocks keep their static depth
    let classes = op_classes(program);
    let is_static = |s: &SiteId| classes.get(s).is_some_and(|c| c.is_static());
    let mut out = Coarsening::default();
    for f in program.functions.values() {
        let stages = (f.name == program.entry).then_some(&typed.main_stages);
        let uses = use_counts(&f.body);
        for raw in regions_of(f, stages) {
            let ops: Vec<(&str, SiteId, OpCode, &Vec<Expr>)> = raw
                .lets
                .iter()
                .filter_map(|(n, b)| match b {
                    Expr::PrimOp { site, op, args } => Some((*n, *site, *op, args)),
                    _ => None,
                })
                .collect();
            let index: HashMap<&str, usize> = ops.iter().enumerate().map(|(i, o)| (o.0, i)).collect();
            let class_of = |i: usize| is_static(&ops[i].1);
            let mut parent: Vec<usize> = (0..ops.len()).collect();
            let mut stacks: Vec<Vec<usize>> = Vec::new();
            if opts.coarsen {
                for (j, (_, _, _, args)) in ops.iter().enumerate() {
                    for a in args.iter() {
                        if let Expr::Var(v) = a {
                            if let Some(&i) = index.get(v.as_str()) {
                                if class_of(i) == class_of(j) {
                                    union(&mut parent, i, j);
                                }
                            }
                        }
                    }
                }
                if opts.hfuse {
                    let mut by_key: BTreeMap<(bool, String), Vec<usize>> = BTreeMap::new();
                    for (i, (_, site, op, args)) in ops.iter().enumerate() {
                        if *op != OpCode::Dense {
                            continue;
                        }
                        let Expr::Var(x) = &args[0] else { continue };
                        let w_shared = match &args[1] {
                            Expr::ConstTensor { .. } => true,
                            Expr::Var(w) => !index.contains_key(w.as_str()) && reuse.joined_op_class(&f.name, *site, 1).is_shared(),
                            _ => false,
                        };
                        if w_shared {
                            by_key.entry((class_of(i), x.clone())).or_default().push(i);
                        }
                    }
                    for (_, group) in by_key {
                        if group.len() > 1 {
                            for w in group.windows(2) {
                                union(&mut parent, w[0], w[1]);
                            }
                            stacks.push(group);
                        }
                    }
                }
            }
            // components, static ones first, each in first-op order
            let mut comps: BTreeMap<(bool, usize), Vec<usize>> = BTreeMap::new();
            for i in 0..ops.len() {
                let root = find(&mut parent, i);
                comps.entry((!class_of(root), root)).or_default().push(i);
            }
            let mut region_blocks = Vec::new();
            for members in comps.into_values() {
                let id = out.blocks.len();
                let local: HashMap<usize, usize> = members.iter().enumerate().map(|(k, m)| (*m, k)).collect();
                let mut inputs: Vec<BlockInput> = Vec::new();
                let mut block_ops = Vec::new();
                let mut internal_uses: HashMap<&str, usize> = HashMap::new();
                for &m in &members {
                    let (name, site, op, args) = ops[m];
                    let mut bargs = Vec::new();
                    for (ai, a) in args.iter().enumerate() {
                        if let Expr::Var(v) = a {
                            if let Some(k) = index.get(v.as_str()).and_then(|i| local.get(i)) {
                                bargs.push(BlockArg::Op(*k));
                                *internal_uses.entry(v.as_str()).or_insert(0) += 1;
                                continue;
                            }
                        }
                        let (atom, shape, class) = match a {
                            Expr::Var(v) => {
                                let ty = typed.var_type(&f.name, v).unwrap_or_else(|| panic!("type of `{v}` in @{}", f.name));
                                let shape = ty.as_tensor().map(<[usize]>::to_vec).unwrap_or_default();
                                (InputAtom::Var(v.clone()), shape, reuse.joined_op_class(&f.name, site, ai))
                            }
                            Expr::ConstTensor { shape, fill } => {
                                let key = ConstKey::new(shape, fill.0);
                                (InputAtom::Const(key.clone()), shape.clone(), Class::Shared(Source::Const(key)))
                            }
                            other => panic!("non-tensor prim-op operand {other:?}"),
                        };
                        let pos = match inputs.iter().position(|x| x.atom == atom) {
                            Some(p) => p,
                            None => {
                                inputs.push(BlockInput { atom, shape, class });
                                inputs.len() - 1
                            }
                        };
                        bargs.push(BlockArg::Input(pos));
                    }
                    let shape = match typed.site_types.get(&site) {
                        Some(Type::Tensor(s)) => s.clone(),
                        _ => vec![1, 1],
                    };
                    block_ops.push(BlockOp {
                        site,
                        op,
                        name: name.to_string(),
                        args: bargs,
                        shape,
                    });
                }
                let outputs = block_ops
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| {
                        uses.get(o.name.as_str()).copied().unwrap_or(0)
                            > internal_uses.get(o.name.as_str()).copied().unwrap_or(0)
                    })
                    .map(|(i, _)| i)
                    .collect();
                let block_stacks = stacks
                    .iter()
                    .filter(|s| local.contains_key(&s[0]))
                    .map(|s| s.iter().map(|m| local[m]).collect())
                    .collect();
                for o in &block_ops {
                    out.block_of_site.insert(o.site, id);
                }
                out.blocks.push(StaticBlock {
                    id,
                    func: f.name.clone(),
                    ops: block_ops,
                    inputs,
                    outputs,
                    stacks: block_stacks,
                    hoist: if class_of(members[0]) {
                        HoistClass::StaticDepth(0)
                    } else {
                        HoistClass::Dynamic
                    },
                });
                region_blocks.push(id);
            }
            out.regions.push(Region {
                func: f.name.clone(),
                lets: raw.lets.iter().map(|(n, _)| n.to_string()).collect(),
                pass: raw
                    .lets
                    .iter()
                    .filter(|(_, b)| !matches!(b, Expr::PrimOp { .. }))
                    .map(|(n, _)| n.to_string())
                    .collect(),
                blocks: region_blocks,
            });
        }
    }
    if !opts.hoist {
        for b in &mut out.blocks {
            b.hoist = HoistClass::Dynamic;
        }
        return out;
    }
    // block-level static depths
    let unit_of: HashMap<SiteId, usize> = out.block_of_site.iter().map(|(s, b)| (*s, *b)).collect();
    let forced: Vec<bool> = out.blocks.iter().map(|b| !b.hoist.is_static()).collect();
    let depths = unit_depths(program, &unit_of, out.blocks.len(), &forced);
    for (b, d) in out.blocks.iter_mut().zip(depths) {
        b.hoist = d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::taint::analyze_reuse;
    use crate::zoo::{Model, Size};

    fn run(m: Model, opts: CoarsenOptions) -> Coarsening {
        let t = infer_types(&m.program(Size::Small)).unwrap();
        let r = analyze_reuse(&t.program);
        coarsen(&t, &r, opts)
    }

    fn names(b: &StaticBlock) -> Vec<String> {
        b.ops.iter().map(|o| o.op.to_string()).collect()
    }

    #[test]
    fn rnn_splits_input_and_recurrent_transforms() {
        let c = run(Model::Rnn, CoarsenOptions::default());
        let rnn: Vec<&StaticBlock> = c.blocks.iter().filter(|b| b.func == "rnn").collect();
        assert_eq!(rnn.len(), 2);
        assert_eq!(rnn[0].hoist, HoistClass::StaticDepth(0));
        assert_eq!(names(rnn[0]), ["dense", "add"]);
        assert_eq!(rnn[1].hoist, HoistClass::Dynamic);
        assert_eq!(names(rnn[1]), ["dense", "add", "sigmoid"]);
        let shared: Vec<bool> = rnn[1].inputs.iter().map(|i| i.class.is_shared()).collect();
        // state, h_wt, input_linear
        assert_eq!(shared, [false, true, false]);
        assert_eq!(rnn[1].outputs, vec![2]);
    }

    #[test]
    fn no_coarsening_gives_one_block_per_op() {
        let c = run(
            Model::Treelstm,
            CoarsenOptions {
                coarsen: false,
                ..Default::default()
            },
        );
        assert!(c.blocks.iter().all(|b| b.ops.len() == 1));
        assert_eq!(c.blocks.len(), c.block_of_site.len());
    }

    #[test]
    fn treelstm_gates_fuse_horizontally() {
        let c = run(Model::Treelstm, CoarsenOptions::default());
        let cell: Vec<&StaticBlock> = c.blocks.iter().filter(|b| b.func == "cell").collect();
        assert_eq!(cell.len(), 2);
        assert_eq!(cell[0].stacks.len(), 1);
        assert_eq!(cell[0].stacks[0].len(), 4);
        assert_eq!(cell[0].hoist, HoistClass::StaticDepth(0));
        // hs feeds three gate denses
        assert_eq!(cell[1].stacks.iter().map(Vec::len).collect::<Vec<_>>(), [3]);
    }

    #[test]
    fn nested_inner_body_is_one_block() {
        let c = run(Model::Nestedrnn, CoarsenOptions::default());
        assert_eq!(c.blocks.iter().filter(|b| b.func == "inner").count(), 1);
    }

    #[test]
    fn unrelated_denses_are_not_stacked() {
        let p = parse_program(
            "def @main(w: Tensor[(2, 2)], v: Tensor[(2, 2)], input x: Tensor[(1, 2)], input y: Tensor[(1, 2)]) {
               add(dense(x, w), dense(y, v))
             }",
        )
        .unwrap();
        let t = infer_types(&p).unwrap();
        let c = coarsen(&t, &analyze_reuse(&t.program), CoarsenOptions::default());
        assert_eq!(c.blocks.len(), 1);
        assert!(c.blocks[0].stacks.is_empty());
    }
}
