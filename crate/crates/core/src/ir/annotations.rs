//! Checks for concurrent-call and phase annotations.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ast::*;
use super::parser::concurrent_groups;
use super::types::TypedProgram;
use super::IrError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupInfo {
    pub function: String,
    pub group: u32,
    pub sites: Vec<SiteId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseBoundary {
    pub phase: u32,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub groups: Vec<GroupInfo>,
    pub phases: Vec<PhaseBoundary>,
}

pub fn validate_annotations(typed: &TypedProgram) -> Result<ValidationReport, IrError> {
    let mut report = ValidationReport::default();
    for f in typed.program.functions.values() {
        for (group, sites) in concurrent_groups(f) {
            check_group(f, group, &sites)?;
            report.groups.push(GroupInfo {
                function: f.name.clone(),
                group,
                sites: sites.into_iter().collect(),
            });
        }
    }
    report.phases = explicit_phases(&typed.source.functions[&typed.source.entry])?;
    Ok(report)
}

/// Explicit phase annotations of the entry function, one per stage.
pub fn explicit_phases(main: &FuncDef) -> Result<Vec<PhaseBoundary>, IrError> {
    let mut by_stage: BTreeMap<usize, u32> = BTreeMap::new();
    for a in &main.annotations {
        if let Annotation::Phase { phase, stage } = a {
            if by_stage.insert(*stage, *phase).is_some() {
                return Err(IrError::PhaseConflict { stage: *stage });
            }
        }
    }
    let mut seen: Vec<u32> = by_stage
        .values()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    seen.sort_unstable();
    if seen.iter().enumerate().any(|(i, p)| *p != i as u32) {
        return Err(IrError::NonContiguousPhases { phases: seen });
    }
    let mut last = None;
    for p in by_stage.values() {
        if last.is_some_and(|l| *p < l) {
            return Err(IrError::NonContiguousPhases {
                phases: by_stage.values().copied().collect(),
            });
        }
        last = Some(*p);
    }
    Ok(by_stage
        .into_iter()
        .map(|(stage, phase)| PhaseBoundary { phase, stage })
        .collect())
}

/// Let-chains of an A-normal-form body: each is the list of `(name, bound)`
/// pairs of one straight-line sequence.
pub(crate) fn let_chains(e: &Expr) -> Vec<Vec<(&str, &Expr)>> {
    let mut out = Vec::new();
    collect_chains(e, &mut out);
    out
}

fn collect_chains<'a>(mut e: &'a Expr, out: &mut Vec<Vec<(&'a str, &'a Expr)>>) {
    let mut chain = Vec::new();
    loop {
        match e {
            Expr::Let {
                name, bound, body, ..
            } => {
                chain.push((name.as_str(), &**bound));
                nested_chains(bound, out);
                e = body;
            }
            other => {
                nested_chains(other, out);
                break;
            }
        }
    }
    out.push(chain);
}

fn nested_chains<'a>(e: &'a Expr, out: &mut Vec<Vec<(&'a str, &'a Expr)>>) {
    match e {
        Expr::Match { arms, .. } => {
            for a in arms {
                collect_chains(&a.body, out);
            }
        }
        Expr::If {
            then_branch,
            else_branch,
            ..
        } => {
            collect_chains(then_branch, out);
            collect_chains(else_branch, out);
        }
        Expr::Map { lambda, .. } => collect_chains(&lambda.body, out),
        _ => {}
    }
}

pub(crate) fn free_vars(e: &Expr) -> BTreeSet<&str> {
    let mut vs = BTreeSet::new();
    e.walk(&mut |x| {
        if let Expr::Var(v) = x {
            vs.insert(v.as_str());
        }
    });
    vs
}

fn group_site(bound: &Expr, sites: &BTreeSet<SiteId>) -> bool {
    matches!(bound, Expr::Call { site, .. } if sites.contains(site))
}

fn check_group(f: &FuncDef, group: u32, sites: &BTreeSet<SiteId>) -> Result<(), IrError> {
    let layout = |detail: &str| IrError::ConcurrentLayout {
        group,
        func: f.name.clone(),
        detail: detail.to_string(),
    };
    let chains = let_chains(&f.body);
    let Some(chain) = chains
        .iter()
        .find(|c| c.iter().any(|(_, b)| group_site(b, sites)))
    else {
        return Err(layout("calls are not let-bound"));
    };
    let positions: Vec<usize> = (0..chain.len())
        .filter(|i| group_site(chain[*i].1, sites))
        .collect();
    if positions.len() != sites.len() {
        return Err(layout(
            "calls must be bound in the same straight-line sequence",
        ));
    }
    // Results of earlier calls in the group, plus anything derived from them.
    let mut tainted: BTreeSet<&str> = BTreeSet::new();
    for &(name, bound) in &chain[positions[0]..=*positions.last().unwrap()] {
        let uses = free_vars(bound);
        let hit = uses.iter().find(|v| tainted.contains(*v));
        if group_site(bound, sites) {
            if let Some(v) = hit {
                return Err(IrError::DependentConcurrentCalls {
                    detail: format!(
                        "`{name}` in @{} uses `{v}` from the same group {group}",
                        f.name
                    ),
                });
            }
            tainted.insert(name);
        } else if hit.is_some() {
            tainted.insert(name);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{infer_types, parse_program};

    fn check(src: &str) -> Result<ValidationReport, IrError> {
        validate_annotations(&infer_types(&parse_program(src).unwrap()).unwrap())
    }

    #[test]
    fn dependent_calls_rejected() {
        let err = check(
            "def @f(x: Tensor[(1, 2)]) -> Tensor[(1, 2)] { sigmoid(x) }
             def @g(x: Tensor[(1, 2)]) -> Tensor[(1, 2)] { tanh(x) }
             def @main(x: Tensor[(1, 2)]) {
               let a = #[concurrent(0)] @f(x);
               #[concurrent(0)] @g(a)
             }",
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("calls are data-dependent"),
            "{err}"
        );
    }

    #[test]
    fn independent_calls_form_a_group() {
        let r = check(
            "def @f(x: Tensor[(1, 2)]) -> Tensor[(1, 2)] { sigmoid(x) }
             def @main(x: Tensor[(1, 2)], y: Tensor[(1, 2)]) {
               let a = #[concurrent(0)] @f(x);
               let b = #[concurrent(0)] @f(y);
               add(a, b)
             }",
        )
        .unwrap();
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups[0].sites.len(), 2);
    }

    #[test]
    fn phases_must_be_contiguous() {
        let err = check(
            "def @main(x: Tensor[(1, 2)]) {
               let _ = db.set_phase(0);
               let a = sigmoid(x);
               let _ = db.set_phase(2);
               tanh(a)
             }",
        )
        .unwrap_err();
        assert!(matches!(err, IrError::NonContiguousPhases { .. }), "{err}");
    }
}
