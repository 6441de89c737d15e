//! Canonical formatter. `parse_program(&print_program(p)) == p` for every
//! parsed program.

use std::fmt::Write;

use super::ast::*;
use super::parser::is_phase_marker;

pub fn print_program(program: &Program) -> String {
    let mut out = String::new();
    // entry last, the rest in name order
    let mut names: Vec<&String> = program
        .functions
        .keys()
        .filter(|n| **n != program.entry)
        .collect();
    names.push(&program.entry);
    for (i, name) in names.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_func(&mut out, &program.functions[name]);
    }
    out
}

pub fn print_func(out: &mut String, f: &FuncDef) {
    write!(out, "def @{}(", f.name).unwrap();
    print_params(out, &f.params);
    out.push(')');
    if let Some(ret) = &f.ret {
        write!(out, " -> {ret}").unwrap();
    }
    out.push_str(" {\n");
    indent(out, 1);
    print_expr(out, &f.body, 1);
    out.push_str("\n}\n");
}

fn print_params(out: &mut String, params: &[ParamDecl]) {
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        if p.kind == ParamKind::Input {
            out.push_str("input ");
        }
        out.push_str(&p.name);
        if let Some(ty) = &p.ty {
            write!(out, ": {ty}").unwrap();
        }
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn fmt_f32(v: f32) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Prints `e` in statement position (lets, matches and ifs allowed bare).
pub fn print_expr(out: &mut String, e: &Expr, level: usize) {
    match e {
        Expr::Let {
            name,
            phase,
            bound,
            body,
        } => {
            if is_phase_marker(name, *phase, bound) {
                write!(out, "let _ = db.set_phase({});\n", phase.unwrap_or(0)).unwrap();
            } else {
                write!(out, "let {name} = ").unwrap();
                print_bound(out, bound, level);
                out.push_str(";\n");
            }
            indent(out, level);
            print_expr(out, body, level);
        }
        Expr::Match { scrutinee, arms } => {
            out.push_str("match ");
            print_operand(out, scrutinee, level, 0);
            out.push_str(" {\n");
            for arm in arms {
                indent(out, level + 1);
                match &arm.pattern {
                    Pattern::Wildcard => out.push('_'),
                    Pattern::Ctor(c, binders) => {
                        out.push_str(c.name());
                        if !binders.is_empty() {
                            write!(out, "({})", binders.join(", ")).unwrap();
                        }
                    }
                }
                out.push_str(" => ");
                print_block(out, &arm.body, level + 1);
                out.push_str(",\n");
            }
            indent(out, level);
            out.push('}');
        }
        Expr::If {
            cond,
            then_branch,
            else_branch,
            ..
        } => {
            out.push_str("if ");
            print_operand(out, cond, level, 0);
            out.push(' ');
            print_braced(out, then_branch, level);
            out.push_str(" else ");
            print_braced(out, else_branch, level);
        }
        _ => print_operand(out, e, level, 0),
    }
}

fn print_bound(out: &mut String, e: &Expr, level: usize) {
    match e {
        Expr::Let { .. } => print_braced(out, e, level),
        _ => print_expr(out, e, level),
    }
}

fn print_block(out: &mut String, e: &Expr, level: usize) {
    match e {
        Expr::Let { .. } | Expr::Match { .. } | Expr::If { .. } => print_braced(out, e, level),
        _ => print_operand(out, e, level, 0),
    }
}

fn print_braced(out: &mut String, e: &Expr, level: usize) {
    out.push_str("{\n");
    indent(out, level + 1);
    print_expr(out, e, level + 1);
    out.push('\n');
    indent(out, level);
    out.push('}');
}

fn print_args(out: &mut String, args: &[Expr], level: usize) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        print_operand(out, a, level, 0);
    }
    out.push(')');
}

/// Prints `e` where only an operand may appear; `min_prec` is the binding
/// strength the context requires.
fn print_operand(out: &mut String, e: &Expr, level: usize, min_prec: u8) {
    match e {
        Expr::Let { .. } | Expr::Match { .. } | Expr::If { .. } => print_braced(out, e, level),
        Expr::Var(v) => out.push_str(v),
        Expr::Int(v) => write!(out, "{v}").unwrap(),
        Expr::Float(v) => out.push_str(&fmt_f32(v.0)),
        Expr::ConstTensor { shape, fill } => {
            out.push_str("const((");
            for (i, d) in shape.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write!(out, "{d}").unwrap();
            }
            write!(out, "), {})", fmt_f32(fill.0)).unwrap();
        }
        Expr::Call {
            callee,
            args,
            group,
            ..
        } => {
            if let Some(g) = group {
                write!(out, "#[concurrent({g})] ").unwrap();
            }
            write!(out, "@{callee}").unwrap();
            print_args(out, args, level);
        }
        Expr::PrimOp { op, args, .. } => {
            out.push_str(op.name());
            print_args(out, args, level);
        }
        Expr::Map { lambda, lists, .. } => {
            out.push_str("@map(fn(");
            print_params(out, &lambda.params);
            out.push_str(") ");
            print_braced(out, &lambda.body, level);
            for l in lists {
                out.push_str(", ");
                print_operand(out, l, level, 0);
            }
            out.push(')');
        }
        Expr::Ctor(c, args) => {
            out.push_str(c.name());
            if !args.is_empty() {
                print_args(out, args, level);
            }
        }
        Expr::Tuple(items) => {
            out.push('(');
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                print_operand(out, it, level, 0);
            }
            if items.len() == 1 {
                out.push(',');
            }
            out.push(')');
        }
        Expr::Project(base, idx) => {
            match **base {
                Expr::Var(_)
                | Expr::Call { .. }
                | Expr::PrimOp { .. }
                | Expr::Tuple(_)
                | Expr::Project(..) => print_operand(out, base, level, 0),
                _ => {
                    out.push('(');
                    print_operand(out, base, level, 0);
                    out.push(')');
                }
            }
            write!(out, ".{idx}").unwrap();
        }
        Expr::ScalarOf(x) => {
            out.push_str("scalar_of(");
            print_operand(out, x, level, 0);
            out.push(')');
        }
        Expr::Binary(_, op, a, b) => {
            let prec = op.precedence();
            let wrap = prec < min_prec;
            if wrap {
                out.push('(');
            }
            print_operand(out, a, level, prec);
            write!(out, " {} ", op.symbol()).unwrap();
            print_operand(out, b, level, prec + 1);
            if wrap {
                out.push(')');
            }
        }
    }
}
