//! Shared fixtures for the scheduling benchmarks.

use lazybatch::zoo::{self, InputShape};
use lazybatch::{compile, evaluate_batch, Compiled, Datum, ExecOptions, HostTensor, Model, ScheduleTrace, Size, Toggles};

pub struct Workload {
    pub compiled: Compiled,
    pub weights: Vec<(String, HostTensor)>,
    pub inputs: Vec<Vec<Datum>>,
}

impl Workload {
    pub fn new(model: Model, batch: usize, toggles: Toggles) -> Workload {
        let p = model.program(Size::Small);
        let compiled = compile(&p, toggles).expect("zoo models compile");
        let weights = zoo::weights(&p, 1);
        let inputs = zoo::inputs(model, &p, batch, 1, InputShape::default());
        Workload {
            compiled,
            weights,
            inputs,
        }
    }

    pub fn run(&self, opts: ExecOptions) -> ScheduleTrace {
        let opts = ExecOptions {
            toggles: self.compiled.toggles,
            ..opts
        };
        evaluate_batch(&self.compiled, &self.weights, &self.inputs, opts)
            .expect("zoo models evaluate")
            .1
    }
}
