use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lazybatch::runtime::{schedule_agenda, schedule_depth, DfgNode};
use lazybatch::{ExecOptions, GatherMode, Model, Scheduler, Toggles};
use lazybatch_bench::Workload;

fn schedulers(c: &mut Criterion) {
    let mut g = c.benchmark_group("schedule");
    for model in [Model::Rnn, Model::Treelstm, Model::Nestedrnn] {
        let trace = Workload::new(model, 64, Toggles::all_off()).run(ExecOptions::default());
        let nodes: Vec<&DfgNode> = trace.nodes.iter().collect();
        g.bench_with_input(BenchmarkId::new("depth", model), &nodes, |b, n| b.iter(|| schedule_depth(n)));
        g.bench_with_input(BenchmarkId::new("agenda", model), &nodes, |b, n| {
            b.iter(|| schedule_agenda(n).unwrap())
        });
    }
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for model in [Model::Rnn, Model::Treelstm, Model::Drnn] {
        for (label, toggles) in [("all_on", Toggles::default()), ("all_off", Toggles::all_off())] {
            let w = Workload::new(model, 64, toggles);
            for scheduler in [Scheduler::Depth, Scheduler::Agenda] {
                for gather in [GatherMode::Fused, GatherMode::Explicit] {
                    let opts = ExecOptions {
                        scheduler,
                        gather,
                        ..Default::default()
                    };
                    let id = BenchmarkId::new(format!("{model}/{label}"), format!("{scheduler:?}/{gather:?}"));
                    g.bench_function(id, |b| b.iter(|| w.run(opts)));
                }
            }
        }
    }
    g.finish();
}

criterion_group!(benches, schedulers, end_to_end);
criterion_main!(benches);
