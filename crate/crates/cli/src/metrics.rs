use std::collections::BTreeMap;

use anyhow::{Context, Result};
use serde::Serialize;

use lazybatch::analysis::ProfileReport;
use lazybatch::zoo::{self, InputShape};
use lazybatch::{
    compile, evaluate_batch, interpret_reference, profile_invocations, Counters, Datum, ExecOptions, GatherMode,
    HostTensor, Model, Program, Scheduler, Size, Toggles,
};

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: Model,
    pub size: Size,
    pub batch_size: usize,
    pub seed: u64,
    pub options: ExecOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub config: RunConfig,
    pub counters: Counters,
    /// Batch sizes keyed by "phase/depth/sig".
    pub histogram: BTreeMap<String, Vec<usize>>,
    pub signatures: Vec<String>,
    pub equivalence: bool,
}

struct Prepared {
    program: Program,
    weights: Vec<(String, HostTensor)>,
    inputs: Vec<Vec<Datum>>,
}

fn prepare(cfg: &RunConfig) -> Prepared {
    let program = cfg.model.program(cfg.size);
    let weights = zoo::weights(&program, cfg.seed);
    let inputs = zoo::inputs(cfg.model, &program, cfg.batch_size, cfg.seed, InputShape::default());
    Prepared {
        program,
        weights,
        inputs,
    }
}

pub fn run(cfg: &RunConfig) -> Result<MetricsReport> {
    let p = prepare(cfg);
    let compiled = compile(&p.program, cfg.options.toggles).context("compiling")?;
    let (outputs, trace) = evaluate_batch(&compiled, &p.weights, &p.inputs, cfg.options).context("evaluating")?;
    let mut equivalence = outputs.len() == p.inputs.len();
    for (out, inst) in outputs.iter().zip(&p.inputs) {
        let want = interpret_reference(&p.program, &p.weights, inst).context("reference interpreter")?;
        equivalence &= *out == want;
    }
    equivalence &= trace.check_dependencies().is_ok() && trace.check_phase_order().is_ok();
    Ok(MetricsReport {
        config: cfg.clone(),
        counters: trace.counters,
        histogram: trace.histogram(),
        signatures: compiled.kernels.sigs.iter().map(|s| s.name.clone()).collect(),
        equivalence,
    })
}

pub fn profile(cfg: &RunConfig) -> Result<ProfileReport> {
    let p = prepare(cfg);
    let compiled = compile(&p.program, cfg.options.toggles).context("compiling")?;
    Ok(profile_invocations(&compiled, &p.weights, &p.inputs, cfg.options)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub report: MetricsReport,
}

/// Toggle progression from everything off to everything on, then the same
/// with the gather fused into the kernels.
pub fn progression() -> Vec<(&'static str, Toggles, GatherMode)> {
    let mut t = Toggles::all_off();
    let mut rows = vec![("baseline", t, GatherMode::Explicit)];
    t.horizontal_fuse = true;
    rows.push(("+fusion", t, GatherMode::Explicit));
    t.coarsen = true;
    rows.push(("+coarsen", t, GatherMode::Explicit));
    t.hoist = true;
    rows.push(("+depth hints", t, GatherMode::Explicit));
    t.phases = true;
    t.ghost = true;
    rows.push(("+phases/ghost", t, GatherMode::Explicit));
    rows.push(("+gather fusion", t, GatherMode::Fused));
    rows
}

pub fn compare(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, toggles, gather) in progression() {
        let mut c = cfg.clone();
        c.options.toggles = toggles;
        c.options.gather = gather;
        let report = run(&c)?;
        anyhow::ensure!(report.equivalence, "{label}: outputs differ from the reference");
        rows.push(AblationRow {
            label: label.to_string(),
            report,
        });
    }
    Ok(rows)
}

pub fn table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<16} {:>9} {:>7} {:>9} {:>5} {:>12}\n",
        "config", "launches", "nodes", "sched_ops", "syncs", "gather_bytes"
    );
    for r in rows {
        let c = &r.report.counters;
        s += &format!(
            "{:<16} {:>9} {:>7} {:>9} {:>5} {:>12}\n",
            r.label, c.kernel_launches, c.total_nodes, c.scheduler_ops, c.sync_points, c.gather_bytes
        );
    }
    s
}

pub fn default_options(scheduler: Scheduler, gather: GatherMode, toggles: Toggles, seed: u64) -> ExecOptions {
    ExecOptions {
        scheduler,
        gather,
        toggles,
        seed,
    }
}
