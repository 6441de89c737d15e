//! JSON-friendly summary of the compile-time analyses.

use std::collections::BTreeMap;

use serde::Serialize;

use super::duplicate::DuplicationReport;
use super::hoist::HoistClass;
use super::lower::GhostPlan;
use super::phases::PhaseMap;
use super::taint::Class;
use super::{Compiled, Toggles};
use crate::ir::SiteId;

#[derive(Debug, Clone, Serialize)]
pub struct OperandClass {
    pub kind: String,
    pub site: SiteId,
    pub arg: usize,
    pub class: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContextReport {
    pub context: String,
    pub operands: Vec<OperandClass>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockSummary {
    pub id: usize,
    pub func: String,
    pub ops: Vec<String>,
    pub inputs: Vec<String>,
    pub hoist: HoistClass,
    pub sig: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub toggles: Toggles,
    pub duplication: DuplicationReport,
    pub reuse: Vec<ContextReport>,
    /// Entry-function weights seen as shared, per function.
    pub shared_params: BTreeMap<String, Vec<String>>,
    pub blocks: Vec<BlockSummary>,
    pub ghosts: GhostPlan,
    pub phases: PhaseMap,
}

impl AnalysisReport {
    pub fn new(c: &Compiled) -> AnalysisReport {
        let reuse = c
            .reuse
            .contexts
            .iter()
            .map(|ctx| ContextReport {
                context: ctx.to_string(),
                operands: c
                    .reuse
                    .vector(ctx)
                    .into_iter()
                    .map(|(kind, site, arg, class)| OperandClass {
                        kind: format!("{kind:?}").to_lowercase(),
                        site,
                        arg,
                        class: class.to_string(),
                    })
                    .collect(),
            })
            .collect();
        let shared_params = c
            .reuse
            .contexts
            .iter()
            .map(|ctx| (ctx.func.clone(), c.reuse.shared_params_in(&ctx.func).into_iter().collect()))
            .collect();
        let blocks = c
            .coarsening
            .blocks
            .iter()
            .map(|b| BlockSummary {
                id: b.id,
                func: b.func.clone(),
                ops: b.ops.iter().map(|o| format!("{} = {:?}", o.name, o.op)).collect(),
                inputs: b
                    .inputs
                    .iter()
                    .map(|i| {
                        let tag = match &i.class {
                            Class::Shared(_) => "shared",
                            Class::Batched => "batched",
                        };
                        format!("{:?} {tag}", i.atom)
                    })
                    .collect(),
                hoist: b.hoist,
                sig: c.kernels.sigs[c.kernels.block_sig[b.id]].name.clone(),
            })
            .collect();
        AnalysisReport {
            toggles: c.toggles,
            duplication: c.duplication.clone(),
            reuse,
            shared_params,
            blocks,
            ghosts: c.ghosts.clone(),
            phases: c.phases.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::compile;
    use crate::zoo::{Model, Size};

    #[test]
    fn every_model_report_serializes() {
        for m in Model::ZOO.into_iter().chain([Model::Branchy]) {
            let c = compile(&m.program(Size::Small), Toggles::default()).unwrap();
            let r = AnalysisReport::new(&c);
            assert_eq!(r.blocks.len(), c.coarsening.blocks.len());
            serde_json::to_string(&r).unwrap();
        }
    }

    #[test]
    fn rnn_hoisted_block_is_static() {
        let c = compile(&Model::Rnn.program(Size::Small), Toggles::default()).unwrap();
        let r = AnalysisReport::new(&c);
        let b = r.blocks.iter().find(|b| b.sig == "add_dense").unwrap();
        assert_eq!(b.hoist, HoistClass::StaticDepth(0));
        assert_eq!(r.shared_params["rnn"], ["rnn_bias", "rnn_h_wt", "rnn_i_wt", "rnn_init"]);
    }
}
