use lazybatch::analysis::{compile, Toggles};
use lazybatch::backend::GatherMode;
use lazybatch::data::Datum;
use lazybatch::runtime::{evaluate_batch, interpret_reference, ExecOptions, Scheduler};
use lazybatch::zoo::{self, InputShape, Model, Size};

fn check(model: Model, batch: usize, seed: u64, opts: ExecOptions) -> lazybatch::runtime::ScheduleTrace {
    let p = model.program(Size::Small);
    let c = compile(&p, opts.toggles).unwrap();
    let w = zoo::weights(&p, seed);
    let inputs = zoo::inputs(model, &p, batch, seed, InputShape::default());
    let (out, trace) = evaluate_batch(&c, &w, &inputs, opts).unwrap_or_else(|e| panic!("{model}: {e}"));
    for (i, inst) in inputs.iter().enumerate() {
        let want = interpret_reference(&p, &w, inst).unwrap();
        assert_eq!(out[i], want, "{model} batch {batch} instance {i} {opts:?}");
    }
    trace.check_dependencies().unwrap();
    trace.check_phase_order().unwrap();
    if opts.scheduler == Scheduler::Depth {
        trace.check_depth_coresidency().unwrap();
    }
    trace
}

#[test]
fn all_models_match_reference() {
    for m in Model::ZOO.into_iter().chain([Model::Branchy]) {
        for scheduler in [Scheduler::Depth, Scheduler::Agenda] {
            for gather in [GatherMode::Fused, GatherMode::Explicit] {
                for batch in [1, 3, 8] {
                    let opts = ExecOptions {
                        scheduler,
                        gather,
                        ..Default::default()
                    };
                    check(m, batch, 5, opts);
                }
            }
        }
    }
}

#[test]
fn toggles_never_change_outputs() {
    for m in Model::ZOO.into_iter().chain([Model::Branchy]) {
        for bits in 0..32u32 {
            let toggles = Toggles {
                coarsen: bits & 1 != 0,
                ghost: bits & 2 != 0,
                phases: bits & 4 != 0,
                hoist: bits & 8 != 0,
                horizontal_fuse: bits & 16 != 0,
            };
            for scheduler in [Scheduler::Depth, Scheduler::Agenda] {
                for gather in [GatherMode::Fused, GatherMode::Explicit] {
                    let opts = ExecOptions {
                        toggles,
                        scheduler,
                        gather,
                        seed: 0,
                    };
                    check(m, 2, bits as u64, opts);
                }
            }
        }
    }
}

#[test]
fn rnn_lengths_three_and_five() {
    let p = Model::Rnn.program(Size::Small);
    let c = compile(&p, Toggles::default()).unwrap();
    let w = zoo::weights(&p, 1);
    let mut inputs = Vec::new();
    for len in [3, 5] {
        let shape = InputShape {
            list_len: Some(len),
            ..Default::default()
        };
        inputs.push(zoo::inputs(Model::Rnn, &p, 1, len as u64, shape).remove(0));
    }
    let (_, trace) = evaluate_batch(&c, &w, &inputs, ExecOptions::default()).unwrap();
    let rec = c.kernels.sigs.iter().find(|s| s.name == "sigmoid_add_dense").unwrap().id;
    let rec_batches: Vec<(u32, usize)> = trace
        .batches
        .iter()
        .filter(|b| b.sig == rec)
        .map(|b| (b.depth, b.size))
        .collect();
    assert_eq!(rec_batches, [(1, 2), (2, 2), (3, 2), (4, 1), (5, 1)]);
    let hoisted: Vec<_> = trace.batches.iter().filter(|b| b.phase == 0 && b.depth == 0).collect();
    assert_eq!(hoisted.len(), 1);
    assert_eq!(hoisted[0].size, 8);
    assert!(matches!(&inputs[0][0], Datum::Adt(..)));
}
