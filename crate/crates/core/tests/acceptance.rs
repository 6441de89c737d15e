//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p lazybatch-core --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lazybatch::analysis::duplicate::conflicts;
use lazybatch::ir::{infer_types, Ctor, OpCode};
use lazybatch::kernelgen::signature::{SigOpKind, SigRef};
use lazybatch::SigId;
use lazybatch::zoo::{self, InputShape, Model, Size};
use lazybatch::{
    compile, evaluate_batch, interpret_reference, Compiled, Datum, ExecOptions, GatherMode, HostTensor, ScheduleTrace,
    Scheduler, Toggles,
};

const EQUIVALENCE_BUDGET: Duration = Duration::from_secs(60);
const COARSEN_MIN_RATIO: f64 = 4.0;
const DEPTH_OPS_PER_NODE: u64 = 4;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

struct Fixture {
    model: Model,
    compiled: Compiled,
    weights: Vec<(String, HostTensor)>,
}

impl Fixture {
    fn new(model: Model, toggles: Toggles) -> Fixture {
        let p = model.program(Size::Small);
        let compiled = compile(&p, toggles).unwrap();
        let weights = zoo::weights(&p, 1);
        Fixture {
            model,
            compiled,
            weights,
        }
    }

    fn inputs(&self, batch: usize, seed: u64, shape: InputShape) -> Vec<Vec<Datum>> {
        zoo::inputs(self.model, &self.compiled.typed.program, batch, seed, shape)
    }

    fn run(&self, inputs: &[Vec<Datum>], scheduler: Scheduler, gather: GatherMode) -> (Vec<Datum>, ScheduleTrace) {
        let opts = ExecOptions {
            scheduler,
            gather,
            toggles: self.compiled.toggles,
            seed: 0,
        };
        evaluate_batch(&self.compiled, &self.weights, inputs, opts).unwrap()
    }

    fn sig(&self, name: &str) -> SigId {
        self.compiled
            .kernels
            .sigs
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("{}: no signature {name}", self.model))
            .id
    }

    fn reference(&self, inst: &[Datum]) -> Datum {
        interpret_reference(&self.compiled.typed.program, &self.weights, inst).unwrap()
    }
}

fn every_model() -> impl Iterator<Item = Model> {
    Model::ZOO.into_iter()
}

fn list_of(shape_len: usize) -> InputShape {
    InputShape {
        list_len: Some(shape_len),
        ..Default::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    for m in every_model() {
        let f = Fixture::new(m, Toggles::default());
        for batch in [1, 2, 8, 64] {
            for seed in 0..5 {
                let inputs = f.inputs(batch, seed, InputShape::default());
                let want: Vec<Datum> = inputs.iter().map(|i| f.reference(i)).collect();
                for scheduler in [Scheduler::Depth, Scheduler::Agenda] {
                    for gather in [GatherMode::Fused, GatherMode::Explicit] {
                        let (out, trace) = f.run(&inputs, scheduler, gather);
                        ensure!(out == want, "{m} batch {batch} seed {seed} {scheduler:?}/{gather:?}: outputs differ");
                        trace.check_dependencies().map_err(|e| format!("{m}: {e}"))?;
                        trace.check_phase_order().map_err(|e| format!("{m}: {e}"))?;
                        if scheduler == Scheduler::Depth {
                            trace.check_depth_coresidency().map_err(|e| format!("{m}: {e}"))?;
                        }
                        runs += 1;
                    }
                }
            }
        }
    }
    let took = start.elapsed();
    ensure!(took < EQUIVALENCE_BUDGET, "{runs} runs took {took:?}");
    Ok(format!("{runs} runs bitwise equal in {:.1}s", took.as_secs_f64()))
}

/// Longest-path depth of every node over producer edges.
fn topo_depths(trace: &ScheduleTrace) -> Vec<usize> {
    let mut d = vec![0usize; trace.nodes.len()];
    for n in &trace.nodes {
        d[n.id] = n.producers.iter().map(|p| d[*p] + 1).max().unwrap_or(0);
    }
    d
}

fn criterion_2() -> Outcome {
    let f = Fixture::new(Model::Rnn, Toggles::default());
    let inputs = f.inputs(8, 11, list_of(10));
    let (out, trace) = f.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    ensure!(out == inputs.iter().map(|i| f.reference(i)).collect::<Vec<_>>(), "outputs differ");
    let (rec, hoist, output) = (f.sig("sigmoid_add_dense"), f.sig("add_dense"), f.sig("relu_add_dense"));
    // oracle: one launch per distinct topological depth of each signature
    let depths = topo_depths(&trace);
    let levels = |sig| {
        trace
            .nodes
            .iter()
            .filter(|n| n.sig == sig)
            .map(|n| depths[n.id])
            .collect::<BTreeSet<_>>()
            .len()
    };
    let got = (trace.launches_of(rec), trace.launches_of(hoist), trace.launches_of(output));
    ensure!(got == (10, 1, 1), "launches (recurrent, hoisted, output) = {got:?}");
    ensure!(levels(rec) == 10, "oracle recurrent levels {}", levels(rec));
    // hoisted nodes sit at several topological depths but still share one launch
    ensure!(levels(output) == 10, "oracle output levels {}", levels(output));
    for m in every_model() {
        let g = Fixture::new(m, Toggles::default());
        for seed in 0..3 {
            let (_, t) = g.run(&g.inputs(8, seed, InputShape::default()), Scheduler::Depth, GatherMode::Fused);
            t.check_depth_coresidency().map_err(|e| format!("{m}: {e}"))?;
        }
    }
    Ok(format!("rnn b8 len10 launches {got:?}; co-residency holds on all models"))
}

fn criterion_3() -> Outcome {
    let on = Fixture::new(Model::Rnn, Toggles::default());
    let off = Fixture::new(
        Model::Rnn,
        Toggles {
            hoist: false,
            ..Default::default()
        },
    );
    let inputs = on.inputs(8, 3, InputShape::default());
    let (a, t_on) = on.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    let (b, t_off) = off.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    ensure!(a == b, "outputs differ");
    let (l_on, l_off) = (t_on.counters.kernel_launches, t_off.counters.kernel_launches);
    ensure!(l_off > l_on, "no-hoist {l_off} vs hoist {l_on}");
    let tokens: usize = inputs.iter().map(|i| i[0].as_list().unwrap().len()).sum();
    let hoisted = on.sig("add_dense");
    let batches: Vec<usize> = t_on.batches.iter().filter(|b| b.sig == hoisted).map(|b| b.size).collect();
    ensure!(batches == [tokens], "hoisted batches {batches:?}, {tokens} tokens");
    Ok(format!("launches {l_on} hoisted vs {l_off} not; one batch of {tokens} input transforms"))
}

fn branchy_inputs(flags: &[&[i64]]) -> Vec<Vec<Datum>> {
    flags
        .iter()
        .map(|fs| vec![Datum::list(fs.iter().map(|&x| Datum::Int(x)).collect())])
        .collect()
}

fn criterion_4() -> Outcome {
    let on = Fixture::new(Model::Branchy, Toggles::default());
    let off = Fixture::new(
        Model::Branchy,
        Toggles {
            ghost: false,
            ..Default::default()
        },
    );
    let c = on.sig("relu_dense");
    ensure!(off.sig("relu_dense") == c, "signature ids differ");
    // single step: one flagged, one unflagged instance
    let one = branchy_inputs(&[&[1], &[0]]);
    let (a, t_on) = on.run(&one, Scheduler::Depth, GatherMode::Fused);
    let (b, t_off) = off.run(&one, Scheduler::Depth, GatherMode::Fused);
    ensure!(a == b, "outputs differ");
    let single = (t_off.launches_of(c), t_on.launches_of(c));
    ensure!(single == (2, 1), "post-conditional launches (off, on) = {single:?}");
    // over several steps with mixed flags, one launch per step
    let many = branchy_inputs(&[&[1, 0, 1, 1], &[0, 0, 1, 0], &[1, 1, 0, 0]]);
    let (a, t_on) = on.run(&many, Scheduler::Depth, GatherMode::Fused);
    let (b, t_off) = off.run(&many, Scheduler::Depth, GatherMode::Fused);
    ensure!(a == b, "outputs differ");
    ensure!(a == many.iter().map(|i| on.reference(i)).collect::<Vec<_>>(), "outputs differ from reference");
    ensure!(t_on.counters.sync_points == 0, "unexpected sync points");
    ensure!(t_on.launches_of(c) == 4, "ghost-on launches {}", t_on.launches_of(c));
    ensure!(t_off.launches_of(c) > 4, "ghost-off launches {}", t_off.launches_of(c));
    Ok(format!(
        "single step {} -> {}; four steps {} -> {}",
        single.0,
        single.1,
        t_off.launches_of(c),
        t_on.launches_of(c)
    ))
}

fn criterion_5() -> Outcome {
    const LMAX: usize = 8;
    let on = Fixture::new(Model::Birnn, Toggles::default());
    let off = Fixture::new(
        Model::Birnn,
        Toggles {
            phases: false,
            ..Default::default()
        },
    );
    let inputs: Vec<Vec<Datum>> = (1..=LMAX)
        .map(|len| on.inputs(1, len as u64, list_of(len)).remove(0))
        .collect();
    let out_sig = on.sig("relu_add_dense_concat");
    ensure!(off.sig("relu_add_dense_concat") == out_sig, "signature ids differ");
    let (a, t_on) = on.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    let (b, t_off) = off.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    ensure!(a == b, "outputs differ");
    let got = (t_on.launches_of(out_sig), t_off.launches_of(out_sig));
    ensure!(got == (1, LMAX), "output launches (phases on, off) = {got:?}");
    for m in every_model() {
        let g = Fixture::new(m, Toggles::default());
        for sched in [Scheduler::Depth, Scheduler::Agenda] {
            let (_, t) = g.run(&g.inputs(8, 2, InputShape::default()), sched, GatherMode::Fused);
            t.check_phase_order().map_err(|e| format!("{m}: {e}"))?;
        }
    }
    Ok(format!("output launches {} with phases, {} without; phase order holds", got.0, got.1))
}

fn criterion_6() -> Outcome {
    let on = Fixture::new(Model::Treelstm, Toggles::default());
    let per_op = Fixture::new(
        Model::Treelstm,
        Toggles {
            coarsen: false,
            horizontal_fuse: false,
            ..Default::default()
        },
    );
    let inputs = on.inputs(64, 6, InputShape::default());
    let (a, t_on) = on.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    let (b, t_off) = per_op.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    ensure!(a == b, "outputs differ");
    let ratio = t_off.counters.kernel_launches as f64 / t_on.counters.kernel_launches as f64;
    ensure!(ratio >= COARSEN_MIN_RATIO, "ratio {ratio:.2}");
    Ok(format!(
        "launches {} per-op vs {} coarsened, ratio {ratio:.1}",
        t_off.counters.kernel_launches, t_on.counters.kernel_launches
    ))
}

fn tree_height(d: &Datum) -> usize {
    match d {
        Datum::Adt(Ctor::Node, kids) => 1 + kids.iter().map(tree_height).max().unwrap_or(0),
        _ => 0,
    }
}

/// Levels at which an instance forces a gate value: every level with a
/// node that still has budget left.
fn decision_levels(output: &Datum, budget: i64) -> usize {
    if budget <= 0 {
        return 0;
    }
    tree_height(output).min(budget as usize - 1) + 1
}

fn criterion_7() -> Outcome {
    let f = Fixture::new(Model::Drnn, Toggles::default());
    let inputs = f.inputs(8, 7, InputShape::default());
    let (out, trace) = f.run(&inputs, Scheduler::Depth, GatherMode::Fused);
    let mut sequential = 0;
    let mut max_decisions = 0;
    for (i, inst) in inputs.iter().enumerate() {
        let want = f.reference(inst);
        ensure!(out[i] == want, "instance {i} differs");
        let (alone, t) = f.run(std::slice::from_ref(inst), Scheduler::Depth, GatherMode::Fused);
        ensure!(alone[0] == want, "instance {i} alone differs");
        sequential += t.counters.kernel_launches;
        let Datum::Int(budget) = inst[1] else {
            return Err("budget is not an int".into());
        };
        let levels = decision_levels(&want, budget);
        ensure!(t.counters.sync_points as usize == levels, "instance {i}: {} syncs vs {levels} levels", t.counters.sync_points);
        max_decisions = max_decisions.max(levels);
    }
    let fibers = trace.counters.kernel_launches;
    ensure!(fibers < sequential, "fibers {fibers} vs sequential {sequential}");
    let sync = trace.counters.sync_points as usize;
    ensure!(sync <= max_decisions + 1, "sync {sync} > {max_decisions} + 1");
    ensure!(sync > 0, "no sync points");
    Ok(format!("launches {fibers} vs {sequential} sequential; sync {sync} <= {max_decisions} + 1"))
}

fn criterion_8() -> Outcome {
    let mut total = 0;
    for m in every_model() {
        let f = Fixture::new(m, Toggles::default());
        let inputs = f.inputs(8, 4, InputShape::default());
        let (a, t_f) = f.run(&inputs, Scheduler::Depth, GatherMode::Fused);
        let (b, t_e) = f.run(&inputs, Scheduler::Depth, GatherMode::Explicit);
        ensure!(a == b, "{m}: outputs differ across gather modes");
        ensure!(t_f.counters.gather_bytes == 0, "{m}: fused gathered {}", t_f.counters.gather_bytes);
        ensure!(t_e.counters.gather_bytes > 0, "{m}: explicit gathered nothing");
        total += t_e.counters.gather_bytes;
    }
    Ok(format!("fused 0 bytes everywhere; explicit {total} bytes over 7 models"))
}

fn criterion_9() -> Outcome {
    let t = infer_types(&Model::Birnn.program(Size::Small)).unwrap();
    let (dup, report, d) = lazybatch::analysis::duplicate(&t).map_err(|e| e.to_string())?;
    ensure!(d.conflict_count() == 0, "{} conflicts remain", d.conflict_count());
    ensure!(conflicts(&report, &dup.program).is_empty(), "conflicts after duplication");
    let copies: Vec<String> = d.clones.iter().flat_map(|c| c.1.clone()).collect();
    ensure!(copies.len() == 2, "copies {copies:?}");
    let mut all = BTreeSet::new();
    for (copy, prefix) in copies.iter().zip(["f_", "b_"]) {
        let shared = report.shared_params_in(copy);
        let want: BTreeSet<String> = ["rnn_bias", "rnn_i_wt", "rnn_h_wt", "rnn_init"]
            .iter()
            .map(|s| format!("{prefix}{s}"))
            .collect();
        ensure!(shared == want, "{copy}: shared {shared:?}");
        all.extend(shared);
    }
    ensure!(all.len() == 8, "{} shared in total", all.len());

    let mv = Fixture::new(Model::Mvrnn, Toggles::default());
    let mut act_act = 0;
    for s in &mv.compiled.kernels.sigs {
        for op in &s.op_dag {
            if op.kind == SigOpKind::Prim(OpCode::Dense) {
                let batched = |r: &SigRef| matches!(r, SigRef::Input(i) if !s.inputs[*i].shared);
                if op.args.iter().all(batched) {
                    act_act += 1;
                }
            }
        }
    }
    ensure!(act_act == 2, "mv-rnn dense ops with two batched operands: {act_act}");
    Ok(format!("birnn copies {copies:?} share 4 each, 8 total, 0 conflicts; mv-rnn 2 batched x batched"))
}

fn criterion_10() -> Outcome {
    let mut worst_depth = 0.0f64;
    let mut rows = BTreeMap::new();
    for m in every_model().chain([Model::Branchy]) {
        for toggles in [Toggles::default(), Toggles::all_off()] {
            let f = Fixture::new(m, toggles);
            for batch in [1, 8, 64] {
                let inputs = f.inputs(batch, 9, InputShape::default());
                let (_, d) = f.run(&inputs, Scheduler::Depth, GatherMode::Fused);
                let (_, a) = f.run(&inputs, Scheduler::Agenda, GatherMode::Fused);
                let n = d.counters.total_nodes;
                ensure!(a.counters.total_nodes == n, "{m}: node counts differ");
                ensure!(d.counters.scheduler_ops <= DEPTH_OPS_PER_NODE * n, "{m} b{batch}: depth ops {} for {n} nodes", d.counters.scheduler_ops);
                ensure!(a.counters.scheduler_ops >= n + a.edges, "{m} b{batch}: agenda ops {} < {n} + {}", a.counters.scheduler_ops, a.edges);
                worst_depth = worst_depth.max(d.counters.scheduler_ops as f64 / n as f64);
                rows.insert(m, (d.counters.scheduler_ops, a.counters.scheduler_ops));
            }
        }
    }
    Ok(format!("depth ops <= {worst_depth:.2} N; agenda ops >= N + E on every run"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("equivalence suite", criterion_1),
        ("depth batching law", criterion_2),
        ("hoisting", criterion_3),
        ("ghost operators", criterion_4),
        ("program phases", criterion_5),
        ("coarsening", criterion_6),
        ("fibers", criterion_7),
        ("gather fusion", criterion_8),
        ("parameter reuse", criterion_9),
        ("scheduler work", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match res {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
