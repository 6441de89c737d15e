//! Moves the calls of each concurrent group next to each other.
//!
//! Lets between the first and last call of a group that do not read any of
//! the group's results are moved before the first call; the others after
//! the last one. Validation has already rejected groups whose calls read
//! each other's results.

use std::collections::BTreeSet;

use crate::ir::annotations::free_vars;
use crate::ir::*;

pub fn group_concurrent_calls(program: &Program) -> Program {
    let mut out = program.clone();
    for f in out.functions.values_mut() {
        let body = std::mem::replace(&mut f.body, Expr::Int(0));
        f.body = rewrite(body);
    }
    out
}

type Item = (String, Option<u32>, Expr);

fn rewrite(e: Expr) -> Expr {
    let mut items: Vec<Item> = Vec::new();
    let mut cur = e;
    loop {
        match cur {
            Expr::Let {
                name,
                phase,
                bound,
                body,
            } => {
                items.push((name, phase, nested(*bound)));
                cur = *body;
            }
            other => {
                cur = nested(other);
                break;
            }
        }
    }
    let groups: BTreeSet<u32> = items.iter().filter_map(|(_, _, b)| group_of(b)).collect();
    for g in groups {
        items = reorder(items, g);
    }
    items.into_iter().rev().fold(cur, |body, (name, phase, bound)| Expr::Let {
        name,
        phase,
        bound: Box::new(bound),
        body: Box::new(body),
    })
}

fn nested(e: Expr) -> Expr {
    match e {
        Expr::Match { scrutinee, arms } => Expr::Match {
            scrutinee,
            arms: arms
                .into_iter()
                .map(|a| Arm {
                    pattern: a.pattern,
                    body: rewrite(a.body),
                })
                .collect(),
        },
        Expr::If {
            site,
            cond,
            then_branch,
            else_branch,
        } => Expr::If {
            site,
            cond,
            then_branch: Box::new(rewrite(*then_branch)),
            else_branch: Box::new(rewrite(*else_branch)),
        },
        Expr::Map {
            site,
            mut lambda,
            lists,
        } => {
            lambda.body = Box::new(rewrite(*lambda.body));
            Expr::Map { site, lambda, lists }
        }
        other => other,
    }
}

fn group_of(e: &Expr) -> Option<u32> {
    match e {
        Expr::Call { group, .. } => *group,
        _ => None,
    }
}

fn reorder(items: Vec<Item>, g: u32) -> Vec<Item> {
    let pos: Vec<usize> = (0..items.len()).filter(|i| group_of(&items[*i].2) == Some(g)).collect();
    let (first, last) = (pos[0], *pos.last().unwrap());
    let mut tainted: BTreeSet<String> = BTreeSet::new();
    let mut before = Vec::new();
    let mut calls = Vec::new();
    let mut after = Vec::new();
    let mut out = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        if i < first {
            out.push(item);
            continue;
        }
        if i > last {
            after.push(item);
            continue;
        }
        if group_of(&item.2) == Some(g) {
            tainted.insert(item.0.clone());
            calls.push(item);
        } else if free_vars(&item.2).iter().any(|v| tainted.contains(*v)) {
            tainted.insert(item.0.clone());
            after.push(item);
        } else {
            before.push(item);
        }
    }
    // `after` holds the tainted in-between lets followed by the tail lets,
    // in their original order.
    out.extend(before);
    out.extend(calls);
    out.extend(after);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{Model, Size};

    fn chain_names(e: &Expr, out: &mut Vec<String>) {
        if let Expr::Let { name, body, .. } = e {
            out.push(name.clone());
            chain_names(body, out);
        }
    }

    #[test]
    fn drnn_calls_become_adjacent() {
        let t = infer_types(&Model::Drnn.program(Size::Small)).unwrap();
        let p = group_concurrent_calls(&t.program);
        let mut found = false;
        p.functions["drnn"].body.walk(&mut |e| {
            if let Expr::Let { bound, body, .. } = e {
                if group_of(bound).is_some() {
                    if let Expr::Let { bound: next, .. } = &**body {
                        if group_of(next).is_some() {
                            found = true;
                        }
                    }
                }
            }
        });
        assert!(found);
        let mut names = Vec::new();
        chain_names(&p.functions["main"].body, &mut names);
        let mut orig = Vec::new();
        chain_names(&t.program.functions["main"].body, &mut orig);
        assert_eq!(names, orig);
    }
}
