//! Lexer and recursive-descent parser for `.mbir` sources.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::IrError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    FnName(String),
    Int(i64),
    Float(f32),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 25] = [
    "=>", "->", "<=", ">=", "==", "!=", "#[", "(", ")", "{", "}", "[", "]", ",", ";", ":", "=",
    ".", "+", "-", "*", "<", ">", "]", "_",
];

fn lex(src: &str) -> Result<Vec<Token>, IrError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, c);
            continue;
        }
        // `//` line comments and `(* .. *)` block comments
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                {
                    let c = chars[i];
                    advance(&mut i, &mut line, &mut col, c);
                }
            }
            continue;
        }
        if c == '(' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            advance(&mut i, &mut line, &mut col, '(');
            advance(&mut i, &mut line, &mut col, '*');
            loop {
                if i + 1 >= chars.len() {
                    return Err(IrError::Syntax {
                        line: sl,
                        col: sc,
                        msg: "unterminated comment".into(),
                    });
                }
                if chars[i] == '*' && chars[i + 1] == ')' {
                    advance(&mut i, &mut line, &mut col, '*');
                    advance(&mut i, &mut line, &mut col, ')');
                    break;
                }
                {
                    let c = chars[i];
                    advance(&mut i, &mut line, &mut col, c);
                }
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c == '@' {
            advance(&mut i, &mut line, &mut col, c);
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric()
                    || chars[i] == '_'
                    || (chars[i] == '#' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())))
            {
                {
                    let c = chars[i];
                    advance(&mut i, &mut line, &mut col, c);
                }
            }
            if start == i {
                return Err(IrError::Syntax {
                    line: tl,
                    col: tc,
                    msg: "expected function name after '@'".into(),
                });
            }
            out.push(Token {
                tok: Tok::FnName(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_alphabetic()
            || (c == '_'
                && chars
                    .get(i + 1)
                    .is_some_and(|n| n.is_ascii_alphanumeric() || *n == '_'))
        {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                {
                    let c = chars[i];
                    advance(&mut i, &mut line, &mut col, c);
                }
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut is_float = false;
            while i < chars.len() {
                let d = chars[i];
                if d.is_ascii_digit() {
                    advance(&mut i, &mut line, &mut col, d);
                } else if d == '.'
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
                    && !is_float
                {
                    is_float = true;
                    advance(&mut i, &mut line, &mut col, d);
                } else if (d == 'e' || d == 'E')
                    && chars
                        .get(i + 1)
                        .is_some_and(|n| n.is_ascii_digit() || *n == '-' || *n == '+')
                {
                    is_float = true;
                    advance(&mut i, &mut line, &mut col, d);
                    {
                        let c = chars[i];
                        advance(&mut i, &mut line, &mut col, c);
                    }
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| IrError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("bad float literal '{text}'"),
                })?)
            } else {
                Tok::Int(text.parse().map_err(|_| IrError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("bad integer literal '{text}'"),
                })?)
            };
            out.push(Token {
                tok,
                line: tl,
                col: tc,
            });
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let sym = SYMBOLS
            .iter()
            .find(|s| rest.starts_with(**s))
            .copied()
            .ok_or_else(|| IrError::Syntax {
                line: tl,
                col: tc,
                msg: format!("unexpected character '{c}'"),
            })?;
        for ch in sym.chars() {
            advance(&mut i, &mut line, &mut col, ch);
        }
        out.push(Token {
            tok: Tok::Sym(sym),
            line: tl,
            col: tc,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    next_site: SiteId,
    groups: BTreeMap<u32, Vec<SiteId>>,
}

pub fn parse_program(src: &str) -> Result<Program, IrError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        next_site: 0,
        groups: BTreeMap::new(),
    };
    p.program()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, IrError> {
        let t = &self.toks[self.pos];
        Err(IrError::Syntax {
            line: t.line,
            col: t.col,
            msg: msg.into(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == kw)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), IrError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected '{s}', found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), IrError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected '{kw}', found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, IrError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {}", describe(&other))),
        }
    }

    /// A binder: an identifier or `_`.
    fn binder(&mut self) -> Result<String, IrError> {
        if self.eat_sym("_") {
            return Ok("_".into());
        }
        self.ident()
    }

    fn int(&mut self) -> Result<i64, IrError> {
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            ref other => self.err(format!("expected integer, found {}", describe(other))),
        }
    }

    fn site(&mut self) -> SiteId {
        let s = self.next_site;
        self.next_site += 1;
        s
    }

    fn program(&mut self) -> Result<Program, IrError> {
        let mut functions = BTreeMap::new();
        if matches!(self.peek(), Tok::Eof) {
            return self.err("expected definition");
        }
        while !matches!(self.peek(), Tok::Eof) {
            let (line, col) = (self.toks[self.pos].line, self.toks[self.pos].col);
            let f = self.def()?;
            if functions.contains_key(&f.name) {
                return Err(IrError::DuplicateDefinition {
                    name: f.name,
                    line,
                    col,
                });
            }
            functions.insert(f.name.clone(), f);
        }
        let entry = "main".to_string();
        let main = functions.get_mut(&entry).ok_or(IrError::MissingEntry)?;
        // Lists and trees are per-instance data even without the keyword.
        for p in &mut main.params {
            if matches!(p.ty, Some(Type::List(_)) | Some(Type::Tree(_))) {
                p.kind = ParamKind::Input;
            }
        }
        let params = main.params.clone();
        let program = Program {
            functions,
            entry,
            params,
        };
        check_names(&program)?;
        Ok(program)
    }

    fn def(&mut self) -> Result<FuncDef, IrError> {
        self.expect_kw("def")?;
        let name = match self.peek().clone() {
            Tok::FnName(n) => {
                self.bump();
                n
            }
            other => return self.err(format!("expected '@name', found {}", describe(&other))),
        };
        self.expect_sym("(")?;
        let params = self.params(")")?;
        let ret = if self.eat_sym("->") {
            Some(self.ty()?)
        } else {
            None
        };
        self.expect_sym("{")?;
        self.groups.clear();
        let body = self.expr()?;
        self.expect_sym("}")?;
        let mut annotations: Vec<Annotation> = std::mem::take(&mut self.groups)
            .into_iter()
            .map(|(group, sites)| Annotation::ConcurrentCalls { group, sites })
            .collect();
        let mut stage = 0usize;
        let mut e = &body;
        while let Expr::Let {
            phase,
            bound,
            body,
            name,
            ..
        } = e
        {
            if let Some(p) = phase {
                annotations.push(Annotation::Phase { phase: *p, stage });
            }
            if !is_phase_marker(name, *phase, bound) {
                stage += 1;
            }
            e = body;
        }
        Ok(FuncDef {
            name,
            params,
            ret,
            body,
            annotations,
        })
    }

    fn params(&mut self, close: &str) -> Result<Vec<ParamDecl>, IrError> {
        let mut params = Vec::new();
        if self.eat_sym(close) {
            return Ok(params);
        }
        loop {
            let kind = if self.is_kw("input") && matches!(self.peek_at(1), Tok::Ident(_)) {
                self.bump();
                ParamKind::Input
            } else {
                ParamKind::Weight
            };
            let name = self.ident()?;
            let ty = if self.eat_sym(":") {
                Some(self.ty()?)
            } else {
                None
            };
            params.push(ParamDecl { name, ty, kind });
            if self.eat_sym(close) {
                return Ok(params);
            }
            self.expect_sym(",")?;
        }
    }

    fn ty(&mut self) -> Result<Type, IrError> {
        if self.eat_sym("(") {
            let mut items = Vec::new();
            loop {
                if self.eat_sym(")") {
                    break;
                }
                items.push(self.ty()?);
                if !self.eat_sym(",") {
                    self.expect_sym(")")?;
                    break;
                }
            }
            return Ok(Type::Tuple(items));
        }
        let name = self.ident()?;
        match name.as_str() {
            "Tensor" => {
                self.expect_sym("[")?;
                self.expect_sym("(")?;
                let mut shape = Vec::new();
                loop {
                    if self.eat_sym(")") {
                        break;
                    }
                    let d = self.int()?;
                    if d <= 0 {
                        return self.err("tensor dimensions must be positive");
                    }
                    shape.push(d as usize);
                    if !self.eat_sym(",") {
                        self.expect_sym(")")?;
                        break;
                    }
                }
                self.expect_sym("]")?;
                if shape.is_empty() {
                    return self.err("tensor shape must have at least one dimension");
                }
                Ok(Type::Tensor(shape))
            }
            "Int" => Ok(Type::Scalar(ScalarKind::Int)),
            "Float" => Ok(Type::Scalar(ScalarKind::Float)),
            "List" | "Tree" => {
                self.expect_sym("[")?;
                let inner = Box::new(self.ty()?);
                self.expect_sym("]")?;
                Ok(if name == "List" {
                    Type::List(inner)
                } else {
                    Type::Tree(inner)
                })
            }
            other => self.err(format!("unknown type '{other}'")),
        }
    }

    fn block(&mut self) -> Result<Expr, IrError> {
        self.expect_sym("{")?;
        let e = self.expr()?;
        self.expect_sym("}")?;
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, IrError> {
        if self.is_kw("let") {
            self.bump();
            let name = self.binder()?;
            self.expect_sym("=")?;
            // `let _ = db.set_phase(n);` marks the following stages
            if name == "_" && self.is_kw("db") && matches!(self.peek_at(1), Tok::Sym(".")) {
                self.bump();
                self.bump();
                let f = self.ident()?;
                if f != "set_phase" {
                    return self.err(format!("unknown runtime directive 'db.{f}'"));
                }
                self.expect_sym("(")?;
                let n = self.int()?;
                if n < 0 {
                    return self.err("phase must be non-negative");
                }
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                let body = self.expr()?;
                return Ok(Expr::Let {
                    name,
                    phase: Some(n as u32),
                    bound: Box::new(Expr::Tuple(vec![])),
                    body: Box::new(body),
                });
            }
            let bound = self.expr()?;
            self.expect_sym(";")?;
            let body = self.expr()?;
            return Ok(Expr::Let {
                name,
                phase: None,
                bound: Box::new(bound),
                body: Box::new(body),
            });
        }
        if self.is_kw("match") {
            self.bump();
            let scrutinee = self.binary(0)?;
            self.expect_sym("{")?;
            let mut arms = Vec::new();
            while !self.is_sym("}") {
                let pattern = self.pattern()?;
                self.expect_sym("=>")?;
                let body = if self.is_sym("{") {
                    self.block()?
                } else {
                    self.expr()?
                };
                arms.push(Arm { pattern, body });
                self.eat_sym(",");
            }
            self.expect_sym("}")?;
            if arms.is_empty() {
                return self.err("match needs at least one arm");
            }
            return Ok(Expr::Match {
                scrutinee: Box::new(scrutinee),
                arms,
            });
        }
        if self.is_kw("if") {
            self.bump();
            let site = self.site();
            let cond = self.binary(0)?;
            let then_branch = self.block()?;
            self.expect_kw("else")?;
            let else_branch = if self.is_kw("if") {
                self.expr()?
            } else {
                self.block()?
            };
            return Ok(Expr::If {
                site,
                cond: Box::new(cond),
                then_branch: Box::new(then_branch),
                else_branch: Box::new(else_branch),
            });
        }
        self.binary(0)
    }

    fn pattern(&mut self) -> Result<Pattern, IrError> {
        if self.eat_sym("_") {
            return Ok(Pattern::Wildcard);
        }
        let name = self.ident()?;
        let ctor = Ctor::from_name(&name).ok_or_else(|| IrError::UnknownIdentifier {
            name: name.clone(),
            context: "pattern".into(),
        })?;
        let mut binders = Vec::new();
        if self.eat_sym("(") {
            loop {
                binders.push(self.binder()?);
                if self.eat_sym(")") {
                    break;
                }
                self.expect_sym(",")?;
            }
        }
        if binders.len() != ctor.arity() {
            return self.err(format!(
                "pattern {} expects {} binders",
                ctor.name(),
                ctor.arity()
            ));
        }
        Ok(Pattern::Ctor(ctor, binders))
    }

    fn binop(&self) -> Option<BinOp> {
        let Tok::Sym(s) = self.peek() else {
            return None;
        };
        Some(match *s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "<" => BinOp::Lt,
            ">" => BinOp::Gt,
            "<=" => BinOp::Le,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, IrError> {
        let mut lhs = self.postfix()?;
        while let Some(op) = self.binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let site = self.site();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::Binary(site, op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn postfix(&mut self) -> Result<Expr, IrError> {
        let mut e = self.primary()?;
        while self.is_sym(".") {
            self.bump();
            let idx = self.int()?;
            e = Expr::Project(Box::new(e), idx as usize);
        }
        Ok(e)
    }

    fn args(&mut self) -> Result<Vec<Expr>, IrError> {
        self.expect_sym("(")?;
        let mut args = Vec::new();
        if self.eat_sym(")") {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat_sym(")") {
                return Ok(args);
            }
            self.expect_sym(",")?;
        }
    }

    fn float_lit(&mut self) -> Result<f32, IrError> {
        let neg = self.eat_sym("-");
        let v = match *self.peek() {
            Tok::Float(v) => v,
            Tok::Int(v) => v as f32,
            ref other => return self.err(format!("expected number, found {}", describe(other))),
        };
        self.bump();
        Ok(if neg { -v } else { v })
    }

    fn primary(&mut self) -> Result<Expr, IrError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(F32Lit(v)))
            }
            Tok::Sym("-") => {
                self.bump();
                match self.bump().tok {
                    Tok::Int(v) => Ok(Expr::Int(-v)),
                    Tok::Float(v) => Ok(Expr::Float(F32Lit(-v))),
                    _ => self.err("expected numeric literal after '-'"),
                }
            }
            Tok::Sym("#[") => {
                self.bump();
                let kw = self.ident()?;
                if kw != "concurrent" {
                    return self.err(format!("unknown attribute '{kw}'"));
                }
                self.expect_sym("(")?;
                let g = self.int()?;
                self.expect_sym(")")?;
                self.expect_sym("]")?;
                let e = self.primary()?;
                match e {
                    Expr::Call {
                        site, callee, args, ..
                    } => {
                        self.groups.entry(g as u32).or_default().push(site);
                        Ok(Expr::Call {
                            site,
                            callee,
                            args,
                            group: Some(g as u32),
                        })
                    }
                    _ => self.err("#[concurrent] must annotate a function call"),
                }
            }
            Tok::FnName(name) => {
                self.bump();
                let site = self.site();
                if name == "map" {
                    self.expect_sym("(")?;
                    self.expect_kw("fn")?;
                    self.expect_sym("(")?;
                    let params = self.params(")")?;
                    let body = self.block()?;
                    let mut lists = Vec::new();
                    while self.eat_sym(",") {
                        lists.push(self.expr()?);
                    }
                    self.expect_sym(")")?;
                    if lists.len() != params.len() || lists.is_empty() {
                        return self.err("@map needs one list per lambda parameter");
                    }
                    return Ok(Expr::Map {
                        site,
                        lambda: Lambda {
                            params,
                            body: Box::new(body),
                        },
                        lists,
                    });
                }
                let args = self.args()?;
                Ok(Expr::Call {
                    site,
                    callee: name,
                    args,
                    group: None,
                })
            }
            Tok::Sym("(") => {
                self.bump();
                if self.eat_sym(")") {
                    return Ok(Expr::Tuple(vec![]));
                }
                let first = self.expr()?;
                if self.eat_sym(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_sym(",") {
                    if self.is_sym(")") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_sym(")")?;
                Ok(Expr::Tuple(items))
            }
            Tok::Sym("{") => self.block(),
            Tok::Ident(name) => {
                // qualified `nn.op`
                let name = if name == "nn" && matches!(self.peek_at(1), Tok::Sym(".")) {
                    self.bump();
                    self.bump();
                    format!("nn.{}", self.ident()?)
                } else {
                    self.bump();
                    name
                };
                if let Some(ctor) = Ctor::from_name(&name) {
                    let args = if self.is_sym("(") {
                        self.args()?
                    } else {
                        vec![]
                    };
                    if args.len() != ctor.arity() {
                        return self.err(format!(
                            "{} expects {} arguments",
                            ctor.name(),
                            ctor.arity()
                        ));
                    }
                    return Ok(Expr::Ctor(ctor, args));
                }
                if !self.is_sym("(") {
                    return Ok(Expr::Var(name));
                }
                match name.as_str() {
                    "scalar_of" => {
                        let mut args = self.args()?;
                        if args.len() != 1 {
                            return self.err("scalar_of expects 1 argument");
                        }
                        Ok(Expr::ScalarOf(Box::new(args.remove(0))))
                    }
                    "const" => {
                        self.expect_sym("(")?;
                        let Type::Tensor(shape) = self.shape_ty()? else {
                            unreachable!()
                        };
                        self.expect_sym(",")?;
                        let fill = self.float_lit()?;
                        self.expect_sym(")")?;
                        Ok(Expr::ConstTensor {
                            shape,
                            fill: F32Lit(fill),
                        })
                    }
                    _ => {
                        let Some(op) = OpCode::from_name(&name) else {
                            return Err(IrError::UnknownIdentifier {
                                name,
                                context: "operator".into(),
                            });
                        };
                        let site = self.site();
                        let args = self.args()?;
                        if args.len() != op.arity() {
                            return Err(IrError::Arity {
                                op: op.name().into(),
                                expected: op.arity(),
                                actual: args.len(),
                            });
                        }
                        Ok(Expr::PrimOp { site, op, args })
                    }
                }
            }
            other => self.err(format!("expected expression, found {}", describe(&other))),
        }
    }

    /// `(d1, d2, ..)` as the shape argument of `const`.
    fn shape_ty(&mut self) -> Result<Type, IrError> {
        self.expect_sym("(")?;
        let mut shape = Vec::new();
        loop {
            let d = self.int()?;
            if d <= 0 {
                return self.err("tensor dimensions must be positive");
            }
            shape.push(d as usize);
            if self.eat_sym(")") {
                break;
            }
            self.expect_sym(",")?;
            if self.eat_sym(")") {
                break;
            }
        }
        Ok(Type::Tensor(shape))
    }
}

pub(crate) fn is_phase_marker(name: &str, phase: Option<u32>, bound: &Expr) -> bool {
    phase.is_some() && name == "_" && matches!(bound, Expr::Tuple(items) if items.is_empty())
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::FnName(s) => format!("'@{s}'"),
        Tok::Int(v) => format!("'{v}'"),
        Tok::Float(v) => format!("'{v}'"),
        Tok::Sym(s) => format!("'{s}'"),
        Tok::Eof => "end of input".into(),
    }
}

/// Resolves every variable and callee; rejects unknown identifiers.
fn check_names(program: &Program) -> Result<(), IrError> {
    for f in program.functions.values() {
        let mut scope: Vec<String> = f.params.iter().map(|p| p.name.clone()).collect();
        check_expr(program, &f.name, &f.body, &mut scope)?;
    }
    Ok(())
}

fn check_expr(
    program: &Program,
    func: &str,
    e: &Expr,
    scope: &mut Vec<String>,
) -> Result<(), IrError> {
    match e {
        Expr::Var(v) => {
            if !scope.iter().any(|s| s == v) {
                return Err(IrError::UnknownIdentifier {
                    name: v.clone(),
                    context: format!("function @{func}"),
                });
            }
        }
        Expr::Let {
            name, bound, body, ..
        } => {
            check_expr(program, func, bound, scope)?;
            scope.push(name.clone());
            check_expr(program, func, body, scope)?;
            scope.pop();
        }
        Expr::Call { callee, args, .. } => {
            if !program.functions.contains_key(callee) {
                return Err(IrError::UnknownIdentifier {
                    name: format!("@{callee}"),
                    context: format!("function @{func}"),
                });
            }
            for a in args {
                check_expr(program, func, a, scope)?;
            }
        }
        Expr::PrimOp { args, .. } | Expr::Ctor(_, args) | Expr::Tuple(args) => {
            for a in args {
                check_expr(program, func, a, scope)?;
            }
        }
        Expr::Map { lambda, lists, .. } => {
            for l in lists {
                check_expr(program, func, l, scope)?;
            }
            let n = scope.len();
            scope.extend(lambda.params.iter().map(|p| p.name.clone()));
            check_expr(program, func, &lambda.body, scope)?;
            scope.truncate(n);
        }
        Expr::Match { scrutinee, arms } => {
            check_expr(program, func, scrutinee, scope)?;
            for arm in arms {
                let n = scope.len();
                if let Pattern::Ctor(_, binders) = &arm.pattern {
                    scope.extend(binders.iter().cloned());
                }
                check_expr(program, func, &arm.body, scope)?;
                scope.truncate(n);
            }
        }
        Expr::If {
            cond,
            then_branch,
            else_branch,
            ..
        } => {
            check_expr(program, func, cond, scope)?;
            check_expr(program, func, then_branch, scope)?;
            check_expr(program, func, else_branch, scope)?;
        }
        Expr::Project(x, _) | Expr::ScalarOf(x) => check_expr(program, func, x, scope)?,
        Expr::Binary(_, _, a, b) => {
            check_expr(program, func, a, scope)?;
            check_expr(program, func, b, scope)?;
        }
        Expr::ConstTensor { .. } | Expr::Int(_) | Expr::Float(_) => {}
    }
    Ok(())
}

/// Site ids of every concurrent-annotated call, per group.
pub(crate) fn concurrent_groups(f: &FuncDef) -> BTreeMap<u32, BTreeSet<SiteId>> {
    let mut out: BTreeMap<u32, BTreeSet<SiteId>> = BTreeMap::new();
    f.body.walk(&mut |e| {
        if let Expr::Call {
            site,
            group: Some(g),
            ..
        } = e
        {
            out.entry(*g).or_default().insert(*site);
        }
    });
    out
}
