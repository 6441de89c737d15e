//! Function duplication for context-dependent reuse.
//!
//! When a function is called from places that disagree on which of its
//! operands are shared (or shared with a different tensor), each distinct
//! classification gets its own copy. Repeats until no such conflict is left.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::taint::{analyze_reuse, call_site_owners, Class, Ctx, ReuseReport, UseKind};
use crate::ir::*;

/// Upper bound on the number of copies made for one program.
pub const MAX_CLONES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DuplicationReport {
    /// `(original, copies)` per duplicated function, in the order processed.
    pub clones: Vec<(String, Vec<String>)>,
    /// Functions still in conflict after duplication stopped.
    pub remaining_conflicts: Vec<String>,
}

impl DuplicationReport {
    pub fn conflict_count(&self) -> usize {
        self.remaining_conflicts.len()
    }
}

type Vector = Vec<(UseKind, SiteId, usize, Class)>;

/// Distinct operand classifications seen at calls from outside `func`,
/// with the call sites that produced each, in first-seen order.
fn external_vectors(report: &ReuseReport, owners: &std::collections::HashMap<SiteId, String>, func: &str) -> Vec<(Vector, Vec<SiteId>)> {
    let mut out: Vec<(Vector, Vec<SiteId>)> = Vec::new();
    for ctx in report.contexts_of(func) {
        if ctx.site == ROOT_SITE || owners.get(&ctx.site).is_some_and(|o| o == func) {
            continue;
        }
        let v = report.vector(ctx);
        match out.iter_mut().find(|(w, _)| *w == v) {
            Some((_, sites)) => sites.push(ctx.site),
            None => out.push((v, vec![ctx.site])),
        }
    }
    out
}

fn conflicting(report: &ReuseReport, program: &Program) -> Vec<(String, Vec<Vec<SiteId>>)> {
    let owners = call_site_owners(program);
    program
        .functions
        .keys()
        .filter(|f| **f != program.entry)
        .filter_map(|f| {
            let vs = external_vectors(report, &owners, f);
            (vs.len() > 1).then(|| (f.clone(), vs.into_iter().map(|(_, s)| s).collect()))
        })
        .collect()
}

/// Duplicates functions until every function sees one operand
/// classification from all of its external callers.
pub fn duplicate(typed: &TypedProgram) -> Result<(TypedProgram, ReuseReport, DuplicationReport), IrError> {
    let mut program = typed.program.clone();
    let mut out = DuplicationReport::default();
    let mut made = 0;
    loop {
        let report = analyze_reuse(&program);
        let conflicts = conflicting(&report, &program);
        let Some((func, groups)) = conflicts.first().cloned() else {
            let typed = typed.retype(program)?;
            return Ok((typed, report, out));
        };
        if made + groups.len() > MAX_CLONES {
            out.remaining_conflicts = conflicts.into_iter().map(|(f, _)| f).collect();
            let typed = typed.retype(program)?;
            return Ok((typed, report, out));
        }
        made += groups.len();
        let names = split(&mut program, &func, &groups);
        out.clones.push((func, names));
    }
}

fn clone_name(program: &Program, func: &str, i: usize) -> String {
    let mut name = format!("{func}#{i}");
    while program.functions.contains_key(&name) {
        name.push('\'');
    }
    name
}

/// Replaces `func` by one copy per group of external call sites.
fn split(program: &mut Program, func: &str, groups: &[Vec<SiteId>]) -> Vec<String> {
    let original = program.functions.remove(func).expect("function exists");
    let mut next = program.max_site().map_or(0, |s| s + 1).max(original_max(&original) + 1);
    let mut names = Vec::new();
    let mut retarget: BTreeMap<SiteId, String> = BTreeMap::new();
    for (i, sites) in groups.iter().enumerate() {
        let name = clone_name(program, func, i);
        let mut copy = original.clone();
        copy.name = name.clone();
        let mut remap: BTreeMap<SiteId, SiteId> = BTreeMap::new();
        copy.body.walk_mut(&mut |e| {
            let site = match e {
                Expr::Call { site, callee, .. } => {
                    if callee == func {
                        *callee = name.clone();
                    }
                    site
                }
                Expr::PrimOp { site, .. } | Expr::Map { site, .. } | Expr::If { site, .. } | Expr::Binary(site, ..) => site,
                _ => return,
            };
            remap.insert(*site, next);
            *site = next;
            next += 1;
        });
        for a in &mut copy.annotations {
            if let Annotation::ConcurrentCalls { sites, .. } = a {
                for s in sites.iter_mut() {
                    *s = remap[s];
                }
            }
        }
        for s in sites {
            retarget.insert(*s, name.clone());
        }
        program.functions.insert(name.clone(), copy);
        names.push(name);
    }
    // Calls from elsewhere that no reachable context covered go to the first copy.
    let first = names[0].clone();
    for f in program.functions.values_mut() {
        f.body.walk_mut(&mut |e| {
            if let Expr::Call { site, callee, .. } = e {
                if callee == func {
                    *callee = retarget.get(site).cloned().unwrap_or_else(|| first.clone());
                }
            }
        });
    }
    names
}

fn original_max(f: &FuncDef) -> SiteId {
    let mut m = 0;
    f.body.walk(&mut |e| {
        if let Expr::Call { site, .. } | Expr::PrimOp { site, .. } | Expr::Map { site, .. } | Expr::If { site, .. } | Expr::Binary(site, ..) = e {
            m = m.max(*site);
        }
    });
    m
}

/// Functions whose external callers still disagree.
pub fn conflicts(report: &ReuseReport, program: &Program) -> BTreeSet<String> {
    conflicting(report, program).into_iter().map(|(f, _)| f).collect()
}

/// Entry weights classified SHARED in each external context of `func`.
pub fn shared_params_per_context(report: &ReuseReport, func: &str) -> BTreeMap<Ctx, BTreeSet<String>> {
    let mut out: BTreeMap<Ctx, BTreeSet<String>> = BTreeMap::new();
    for o in report.operands.values() {
        if o.key.ctx.func != func || o.key.kind != UseKind::Op {
            continue;
        }
        let entry = out.entry(o.key.ctx.clone()).or_default();
        if let Class::Shared(super::taint::Source::Param(p)) = &o.class {
            entry.insert(p.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{Model, Size};

    #[test]
    fn birnn_gets_two_rnn_copies() {
        let t = infer_types(&Model::Birnn.program(Size::Small)).unwrap();
        let (t2, r, d) = duplicate(&t).unwrap();
        assert_eq!(d.clones.len(), 1, "{:?}", d.clones);
        assert_eq!(d.clones[0].1, vec!["rnn#0".to_string(), "rnn#1".to_string()]);
        assert_eq!(d.conflict_count(), 0);
        assert!(conflicts(&r, &t2.program).is_empty());
        let f: BTreeSet<String> = r.shared_params_in("rnn#0");
        let want: BTreeSet<String> = ["f_rnn_bias", "f_rnn_i_wt", "f_rnn_h_wt", "f_rnn_init"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(f, want);
        assert_eq!(r.shared_params_in("rnn#1").len(), 4);
    }

    #[test]
    fn agreeing_callers_do_not_duplicate() {
        for m in [Model::Rnn, Model::Treelstm, Model::Stackrnn, Model::Branchy, Model::Drnn] {
            let t = infer_types(&m.program(Size::Small)).unwrap();
            let (_, _, d) = duplicate(&t).unwrap();
            assert!(d.clones.is_empty(), "{m}: {:?}", d.clones);
        }
    }
}
