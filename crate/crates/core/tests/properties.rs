use proptest::prelude::*;

use lazybatch::backend::exec_primop;
use lazybatch::ir::OpCode;
use lazybatch::runtime::{schedule_agenda, schedule_depth, DfgNode};
use lazybatch::zoo::{self, InputShape, Model, Size};
use lazybatch::{
    compile, evaluate_batch, interpret_reference, parse_program, print_program, Arena, Datum, ExecOptions, GatherMode,
    HostTensor, Scheduler, Shape, Toggles,
};

const N: usize = 6;

/// One let of a random recurrent cell: an op over earlier values.
#[derive(Debug, Clone)]
enum CellOp {
    Unary(&'static str, usize),
    Binary(&'static str, usize, usize),
    Dense(usize, usize),
}

fn cell_op() -> impl Strategy<Value = CellOp> {
    prop_oneof![
        (prop::sample::select(vec!["tanh", "sigmoid", "relu"]), any::<prop::sample::Index>())
            .prop_map(|(f, a)| CellOp::Unary(f, a.index(1 << 16))),
        (prop::sample::select(vec!["add", "mul", "+", "*"]), any::<prop::sample::Index>(), any::<prop::sample::Index>())
            .prop_map(|(f, a, b)| CellOp::Binary(f, a.index(1 << 16), b.index(1 << 16))),
        (any::<prop::sample::Index>(), 0..3usize).prop_map(|(a, w)| CellOp::Dense(a.index(1 << 16), w)),
    ]
}

/// A recursive list-walking program whose cell is `ops`, reading the element
/// `x`, the carried state `h` and the bias `b`.
fn program_source(ops: &[CellOp]) -> String {
    let mut vals = vec!["x".to_string(), "h".to_string(), "b".to_string()];
    let mut body = String::new();
    for (i, op) in ops.iter().enumerate() {
        let pick = |k: usize| vals[k % vals.len()].clone();
        let e = match op {
            CellOp::Unary(f, a) => format!("{f}({})", pick(*a)),
            CellOp::Binary(f, a, b) if f.len() == 1 => format!("{} {f} {}", pick(*a), pick(*b)),
            CellOp::Binary(f, a, b) => format!("{f}({}, {})", pick(*a), pick(*b)),
            CellOp::Dense(a, w) => format!("nn.dense({}, w{w})", pick(*a)),
        };
        body += &format!("      let v{i} = {e};\n");
        vals.push(format!("v{i}"));
    }
    let last = vals.last().unwrap();
    format!(
        "def @cell(xs: List[Tensor[(1, {N})]], h: Tensor[(1, {N})], b: Tensor[(1, {N})],
           w0: Tensor[({N}, {N})], w1: Tensor[({N}, {N})], w2: Tensor[({N}, {N})])
    -> List[Tensor[(1, {N})]] {{
  match xs {{
    Nil => Nil,
    Cons(x, t) => {{
{body}      Cons({last}, @cell(t, {last}, b, w0, w1, w2))
    }}
  }}
}}

def @main(b: Tensor[(1, {N})], w0: Tensor[({N}, {N})], w1: Tensor[({N}, {N})], w2: Tensor[({N}, {N})],
          init: Tensor[(1, {N})], xs: List[Tensor[(1, {N})]]) {{
  @map(fn(y) {{ tanh(nn.dense(y, w0)) }}, @cell(xs, init, b, w0, w1, w2))
}}
"
    )
}

fn list_input(rng_seed: u64, len: usize) -> Datum {
    let data = |i: usize| {
        (0..N)
            .map(|j| (((rng_seed as usize * 31 + i * 7 + j * 3) % 17) as f32 - 8.0) / 8.0)
            .collect()
    };
    Datum::list((0..len).map(|i| Datum::Tensor(HostTensor::new(vec![1, N], data(i)))).collect())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = HostTensor> {
    prop::collection::vec(-4.0f32..4.0, rows * cols).prop_map(move |d| HostTensor::new(vec![rows, cols], d))
}

fn same_shape_pair() -> impl Strategy<Value = (HostTensor, HostTensor)> {
    (1..=8usize, 1..=8usize).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
}

fn dense_pair() -> impl Strategy<Value = (HostTensor, HostTensor)> {
    (1..=8usize, 1..=8usize, 1..=8usize).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))
}

fn run_op(op: OpCode, args: &[&HostTensor]) -> Vec<f32> {
    let mut arena = Arena::new(0);
    let hs: Vec<_> = args.iter().map(|t| arena.upload(t)).collect();
    let out = exec_primop(op, &hs, &mut arena).unwrap();
    arena.slice(&out).to_vec()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn random_dag() -> impl Strategy<Value = Vec<DfgNode>> {
    prop::collection::vec((1..4usize, prop::collection::vec(any::<prop::sample::Index>(), 0..3), 0..2u32), 1..40).prop_map(
        |rows| {
            let mut nodes: Vec<DfgNode> = Vec::new();
            for (id, (sig, picks, phase_bump)) in rows.into_iter().enumerate() {
                let mut producers: Vec<usize> = if id == 0 { vec![] } else { picks.iter().map(|p| p.index(id)).collect() };
                producers.sort_unstable();
                producers.dedup();
                let phase_floor = nodes.last().map_or(0, |n: &DfgNode| n.phase);
                let phase = phase_floor + phase_bump.min(1) * (id % 7 == 6) as u32;
                // producers from a later phase are not allowed
                producers.retain(|p| nodes[*p].phase <= phase);
                let depth = producers
                    .iter()
                    .filter(|p| nodes[**p].phase == phase)
                    .map(|p| nodes[*p].depth + 1)
                    .max()
                    .unwrap_or(0);
                nodes.push(DfgNode {
                    id,
                    sig,
                    instance: 0,
                    block: Some(sig),
                    inputs: vec![],
                    outputs: vec![],
                    producers,
                    depth,
                    phase,
                    ghost: false,
                });
            }
            nodes
        },
    )
}

fn check_schedule(nodes: &[DfgNode], batches: &[Vec<usize>]) -> Result<(), TestCaseError> {
    let mut at = vec![usize::MAX; nodes.len()];
    for (i, b) in batches.iter().enumerate() {
        let sig = nodes[b[0]].sig;
        for &n in b {
            prop_assert_eq!(at[n], usize::MAX, "node {} scheduled twice", n);
            prop_assert_eq!(nodes[n].sig, sig);
            at[n] = i;
        }
    }
    for n in nodes {
        prop_assert!(at[n.id] != usize::MAX, "node {} never scheduled", n.id);
        for p in &n.producers {
            prop_assert!(at[*p] < at[n.id], "producer {} not before {}", p, n.id);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn print_parse_round_trip(ops in prop::collection::vec(cell_op(), 1..8)) {
        let src = program_source(&ops);
        let p = parse_program(&src).unwrap();
        let printed = print_program(&p);
        let again = parse_program(&printed).unwrap();
        prop_assert_eq!(print_program(&again), printed);
    }

    #[test]
    fn batched_matches_reference(
        ops in prop::collection::vec(cell_op(), 1..6),
        lens in prop::collection::vec(0..6usize, 1..6),
        scheduler in prop::sample::select(vec![Scheduler::Depth, Scheduler::Agenda]),
        gather in prop::sample::select(vec![GatherMode::Fused, GatherMode::Explicit]),
        bits_ in 0..32u32,
    ) {
        let p = parse_program(&program_source(&ops)).unwrap();
        let toggles = Toggles {
            coarsen: bits_ & 1 != 0,
            ghost: bits_ & 2 != 0,
            phases: bits_ & 4 != 0,
            hoist: bits_ & 8 != 0,
            horizontal_fuse: bits_ & 16 != 0,
        };
        let c = compile(&p, toggles).unwrap();
        let w = zoo::weights(&p, 5);
        let inputs: Vec<Vec<Datum>> = lens.iter().enumerate().map(|(i, &l)| vec![list_input(i as u64, l)]).collect();
        let opts = ExecOptions { scheduler, gather, toggles, seed: 0 };
        let (out, trace) = evaluate_batch(&c, &w, &inputs, opts).unwrap();
        for (o, inst) in out.iter().zip(&inputs) {
            prop_assert_eq!(o, &interpret_reference(&p, &w, inst).unwrap());
        }
        prop_assert!(trace.check_dependencies().is_ok());
        prop_assert!(trace.check_phase_order().is_ok());
        if scheduler == Scheduler::Depth {
            prop_assert!(trace.check_depth_coresidency().is_ok());
        }
    }

    #[test]
    fn dense_matches_scalar_reference((a, b) in dense_pair()) {
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut want = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for kk in 0..k {
                    acc += a.data[i * k + kk] * b.data[kk * n + j];
                }
                want[i * n + j] = acc;
            }
        }
        prop_assert_eq!(bits(&run_op(OpCode::Dense, &[&a, &b])), bits(&want));
    }

    #[test]
    fn elementwise_matches_scalar_reference((a, b) in same_shape_pair()) {
        let zip = |f: fn(f32, f32) -> f32| a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect::<Vec<_>>();
        let map = |f: fn(f32) -> f32| a.data.iter().map(|x| f(*x)).collect::<Vec<_>>();
        prop_assert_eq!(bits(&run_op(OpCode::Add, &[&a, &b])), bits(&zip(|x, y| x + y)));
        prop_assert_eq!(bits(&run_op(OpCode::BiasAdd, &[&a, &b])), bits(&zip(|x, y| x + y)));
        prop_assert_eq!(bits(&run_op(OpCode::Mul, &[&a, &b])), bits(&zip(|x, y| x * y)));
        prop_assert_eq!(bits(&run_op(OpCode::Relu, &[&a])), bits(&map(|x| x.max(0.0))));
        prop_assert_eq!(bits(&run_op(OpCode::Tanh, &[&a])), bits(&map(f32::tanh)));
        prop_assert_eq!(bits(&run_op(OpCode::Sigmoid, &[&a])), bits(&map(|x| 1.0 / (1.0 + (-x).exp()))));
    }

    #[test]
    fn concat_and_argmax_match_scalar_reference((a, b) in same_shape_pair()) {
        let (r, c) = (a.shape[0], a.shape[1]);
        let mut want = Vec::new();
        for i in 0..r {
            want.extend_from_slice(&a.data[i * c..(i + 1) * c]);
            want.extend_from_slice(&b.data[i * c..(i + 1) * c]);
        }
        prop_assert_eq!(bits(&run_op(OpCode::Concat, &[&a, &b])), bits(&want));
        let best = a.data.iter().enumerate().fold(0, |best, (i, v)| if *v > a.data[best] { i } else { best });
        prop_assert_eq!(run_op(OpCode::Argmax, &[&a]), vec![best as f32]);
    }

    #[test]
    fn schedulers_respect_dependencies(nodes in random_dag()) {
        let refs: Vec<&DfgNode> = nodes.iter().collect();
        let d = schedule_depth(&refs);
        check_schedule(&nodes, &d.batches)?;
        let a = schedule_agenda(&refs).unwrap();
        check_schedule(&nodes, &a.batches)?;
        let n = nodes.len() as u64;
        let e: u64 = nodes.iter().map(|x| x.producers.len() as u64).sum();
        prop_assert!(d.ops <= 4 * n);
        prop_assert!(a.ops >= n + e);
    }

    #[test]
    fn ghosts_and_phases_never_change_outputs(
        flags in prop::collection::vec(prop::collection::vec(0..2i64, 0..6), 1..6),
        ghost in any::<bool>(),
        phases in any::<bool>(),
    ) {
        let p = Model::Branchy.program(Size::Small);
        let w = zoo::weights(&p, 2);
        let inputs: Vec<Vec<Datum>> = flags
            .iter()
            .map(|fs| vec![Datum::list(fs.iter().map(|&f| Datum::Int(f)).collect())])
            .collect();
        let on = compile(&p, Toggles::default()).unwrap();
        let toggles = Toggles { ghost, phases, ..Default::default() };
        let other = compile(&p, toggles).unwrap();
        let (a, _) = evaluate_batch(&on, &w, &inputs, ExecOptions::default()).unwrap();
        let (b, _) = evaluate_batch(&other, &w, &inputs, ExecOptions { toggles, ..Default::default() }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn birnn_phase_toggle_is_neutral(len_seed in 0..1000u64, batch in 1..6usize) {
        let p = Model::Birnn.program(Size::Small);
        let w = zoo::weights(&p, len_seed);
        let inputs = zoo::inputs(Model::Birnn, &p, batch, len_seed, InputShape::default());
        let mut outs = Vec::new();
        for phases in [true, false] {
            let toggles = Toggles { phases, ..Default::default() };
            let c = compile(&p, toggles).unwrap();
            outs.push(evaluate_batch(&c, &w, &inputs, ExecOptions { toggles, ..Default::default() }).unwrap().0);
        }
        prop_assert_eq!(&outs[0], &outs[1]);
    }
}

#[test]
fn alloc_many_is_contiguous() {
    let s = Shape::new(1, N);
    let mut arena = Arena::new(3);
    let h = arena.alloc_many(4, s);
    assert!(h.is_contiguous());
    assert_eq!(h.nth(2, s).offset, h.offset + 2 * N);
}
