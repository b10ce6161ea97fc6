//! Lenient parser for programs that may use undeclared type names and
//! functions. No type checking happens here; where `(name)` could start
//! either a cast or a parenthesized value, both readings are kept.

use std::collections::{HashMap, HashSet};

use crate::minic::lexer::{tokenize, Tok, Token, KEYWORDS, UNSUPPORTED_KEYWORDS};
use crate::minic::{BinOp, UnOp};

use super::TypeInferError;

/// A type as written; `Named` may or may not have a typedef.
#[derive(Debug, Clone, PartialEq)]
pub enum PTy {
    Int,
    Float,
    Void,
    Ptr(Box<PTy>),
    Named(String),
}

/// What is known about an identifier in an ambiguous position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lattice {
    MustBeType,
    MustBeValue,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PExpr {
    Int(i32),
    Float(f64),
    Str(String),
    Var(String),
    Unary(UnOp, Box<PExpr>),
    Binary(BinOp, Box<PExpr>, Box<PExpr>),
    Index(Box<PExpr>, Box<PExpr>),
    Deref(Box<PExpr>),
    AddrOf(String),
    Cast(PTy, Box<PExpr>),
    Call(String, Vec<PExpr>),
    /// `(name)` followed by `*` or `-`. Each reading spans the whole
    /// enclosing expression; a reading that fails to parse is `None`.
    Ambig { name: String, lattice: Lattice, value: Option<Box<PExpr>>, cast: Option<Box<PExpr>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PStmt {
    Decl { name: String, ty: PTy, init: Option<PExpr> },
    Assign { target: PExpr, value: PExpr },
    If { cond: PExpr, then: Vec<PStmt>, els: Option<Vec<PStmt>> },
    While { cond: PExpr, body: Vec<PStmt> },
    For { init: Option<Box<PStmt>>, cond: Option<PExpr>, step: Option<Box<PStmt>>, body: Vec<PStmt> },
    Return(Option<PExpr>),
    Expr(PExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PExtern {
    pub name: String,
    pub params: Vec<PTy>,
    pub ret: PTy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownKind {
    Type,
    Function,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguousAst {
    pub typedefs: Vec<(String, PTy)>,
    pub externs: Vec<PExtern>,
    pub name: String,
    pub params: Vec<(String, PTy)>,
    pub ret: PTy,
    pub body: Vec<PStmt>,
    /// Identifiers used as types or called as functions without a
    /// declaration, in order of first use.
    pub unknowns: Vec<(String, UnknownKind)>,
}

impl AmbiguousAst {
    pub fn unknown_identifiers(&self) -> Vec<&str> {
        self.unknowns.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Names declared in the text: typedefs, externs, the function, its
    /// parameters and locals.
    pub fn declared_names(&self) -> HashSet<String> {
        let mut out: HashSet<String> = self.typedefs.iter().map(|t| t.0.clone()).collect();
        out.extend(self.externs.iter().map(|e| e.name.clone()));
        out.insert(self.name.clone());
        out.extend(self.values());
        out
    }

    fn values(&self) -> HashSet<String> {
        let mut out: HashSet<String> = self.params.iter().map(|p| p.0.clone()).collect();
        walk_stmts(&self.body, &mut |s| {
            if let PStmt::Decl { name, .. } = s {
                out.insert(name.clone());
            }
        });
        out
    }

    /// Every ambiguity still present, with its lattice element.
    pub fn ambiguities(&self) -> Vec<(String, Lattice)> {
        let mut out = Vec::new();
        let mut visit = |e: &PExpr| {
            if let PExpr::Ambig { name, lattice, .. } = e {
                out.push((name.clone(), *lattice));
            }
        };
        walk_stmts(&self.body, &mut |s| stmt_exprs(s).into_iter().for_each(|e| walk_expr(e, &mut visit)));
        out
    }
}

pub(crate) fn walk_stmts(stmts: &[PStmt], f: &mut impl FnMut(&PStmt)) {
    for s in stmts {
        f(s);
        match s {
            PStmt::If { then, els, .. } => {
                walk_stmts(then, f);
                if let Some(e) = els {
                    walk_stmts(e, f);
                }
            }
            PStmt::While { body, .. } => walk_stmts(body, f),
            PStmt::For { init, step, body, .. } => {
                if let Some(i) = init {
                    walk_stmts(std::slice::from_ref(i), f);
                }
                if let Some(i) = step {
                    walk_stmts(std::slice::from_ref(i), f);
                }
                walk_stmts(body, f);
            }
            _ => {}
        }
    }
}

fn stmt_exprs(s: &PStmt) -> Vec<&PExpr> {
    match s {
        PStmt::Decl { init, .. } => init.iter().collect(),
        PStmt::Assign { target, value } => vec![target, value],
        PStmt::If { cond, .. } | PStmt::While { cond, .. } => vec![cond],
        PStmt::For { cond, .. } => cond.iter().collect(),
        PStmt::Return(e) => e.iter().collect(),
        PStmt::Expr(e) => vec![e],
    }
}

fn walk_expr(e: &PExpr, f: &mut impl FnMut(&PExpr)) {
    f(e);
    match e {
        PExpr::Unary(_, a) | PExpr::Deref(a) | PExpr::Cast(_, a) => walk_expr(a, f),
        PExpr::Binary(_, a, b) | PExpr::Index(a, b) => {
            walk_expr(a, f);
            walk_expr(b, f);
        }
        PExpr::Call(_, args) => args.iter().for_each(|a| walk_expr(a, f)),
        PExpr::Ambig { value, cast, .. } => {
            value.iter().chain(cast.iter()).for_each(|r| walk_expr(r, f));
        }
        _ => {}
    }
}

fn meet_expr(e: &mut PExpr, types: &HashSet<String>, values: &HashSet<String>) {
    match e {
        PExpr::Unary(_, a) | PExpr::Deref(a) | PExpr::Cast(_, a) => meet_expr(a, types, values),
        PExpr::Binary(_, a, b) | PExpr::Index(a, b) => {
            meet_expr(a, types, values);
            meet_expr(b, types, values);
        }
        PExpr::Call(_, args) => args.iter_mut().for_each(|a| meet_expr(a, types, values)),
        PExpr::Ambig { name, lattice, value, cast } => {
            if types.contains(name.as_str()) {
                *lattice = Lattice::MustBeType;
            } else if values.contains(name.as_str()) {
                *lattice = Lattice::MustBeValue;
            }
            for r in value.iter_mut().chain(cast.iter_mut()) {
                meet_expr(r, types, values);
            }
        }
        _ => {}
    }
}

fn meet_stmts(stmts: &mut [PStmt], types: &HashSet<String>, values: &HashSet<String>) {
    for s in stmts {
        match s {
            PStmt::Decl { init, .. } => init.iter_mut().for_each(|e| meet_expr(e, types, values)),
            PStmt::Assign { target, value } => {
                meet_expr(target, types, values);
                meet_expr(value, types, values);
            }
            PStmt::If { cond, then, els } => {
                meet_expr(cond, types, values);
                meet_stmts(then, types, values);
                if let Some(e) = els {
                    meet_stmts(e, types, values);
                }
            }
            PStmt::While { cond, body } => {
                meet_expr(cond, types, values);
                meet_stmts(body, types, values);
            }
            PStmt::For { init, cond, step, body } => {
                if let Some(i) = init {
                    meet_stmts(std::slice::from_mut(&mut **i), types, values);
                }
                cond.iter_mut().for_each(|e| meet_expr(e, types, values));
                if let Some(i) = step {
                    meet_stmts(std::slice::from_mut(&mut **i), types, values);
                }
                meet_stmts(body, types, values);
            }
            PStmt::Return(e) => e.iter_mut().for_each(|e| meet_expr(e, types, values)),
            PStmt::Expr(e) => meet_expr(e, types, values),
        }
    }
}

/// Parses a possibly incomplete program. Ambiguous `(name)*x` / `(name)-x`
/// forms are kept with both readings unless `name` is a value in scope, a
/// declared typedef, or used as a type elsewhere in the text.
pub fn parse_partial(text: &str) -> Result<AmbiguousAst, TypeInferError> {
    let toks = tokenize(text).map_err(TypeInferError::Parse)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        typedefs: Vec::new(),
        externs: Vec::new(),
        scopes: Vec::new(),
        forced: HashMap::new(),
        unknowns: Vec::new(),
        type_uses: HashSet::new(),
    };
    let mut ast = p.unit().map_err(|e| match e {
        PErr::Syntax(line, col, msg) => TypeInferError::Syntax { line, col, msg },
        PErr::Ambiguous(at) => {
            let t = &toks[at];
            TypeInferError::Syntax { line: t.line, col: t.col, msg: "unresolved ambiguity".into() }
        }
    })?;
    let mut types = p.type_uses.clone();
    types.extend(ast.typedefs.iter().map(|t| t.0.clone()));
    let values = ast.values();
    meet_stmts(&mut ast.body, &types, &values);
    Ok(ast)
}

enum PErr {
    Syntax(usize, usize, String),
    /// An undecided `(name)` at this token index.
    Ambiguous(usize),
}

type R<T> = Result<T, PErr>;

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    typedefs: Vec<(String, PTy)>,
    externs: Vec<PExtern>,
    scopes: Vec<HashSet<String>>,
    /// Reading chosen for an ambiguity site while re-parsing: true = cast.
    forced: HashMap<usize, bool>,
    unknowns: Vec<(String, UnknownKind)>,
    /// Names used in unambiguous type positions.
    type_uses: HashSet<String>,
}

fn is_builtin_type(s: &str) -> bool {
    matches!(s, "int" | "double" | "float" | "void")
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: &str) -> R<T> {
        let t = &self.toks[self.pos];
        Err(PErr::Syntax(t.line, t.col, msg.to_string()))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat(&mut self, p: &str) -> bool {
        let hit = self.is_punct(p);
        if hit {
            self.bump();
        }
        hit
    }

    fn expect(&mut self, p: &str) -> R<()> {
        if self.eat(p) {
            Ok(())
        } else {
            self.err(&format!("expected `{p}`"))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> R<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) && !UNSUPPORTED_KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn is_typedef(&self, s: &str) -> bool {
        self.typedefs.iter().any(|t| t.0 == s)
    }

    fn is_value(&self, s: &str) -> bool {
        self.scopes.iter().any(|sc| sc.contains(s))
    }

    fn note_unknown(&mut self, name: &str, kind: UnknownKind) {
        if !self.unknowns.iter().any(|u| u.0 == name) {
            self.unknowns.push((name.to_string(), kind));
        }
    }

    /// `base ['*']`; `definite` marks an unambiguous type position.
    fn ty(&mut self, definite: bool) -> R<PTy> {
        let base = match self.peek().clone() {
            Tok::Ident(s) if s == "int" => PTy::Int,
            Tok::Ident(s) if s == "double" || s == "float" => PTy::Float,
            Tok::Ident(s) if s == "void" => PTy::Void,
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) && !UNSUPPORTED_KEYWORDS.contains(&s.as_str()) => {
                if !self.is_typedef(&s) {
                    self.note_unknown(&s, UnknownKind::Type);
                }
                if definite {
                    self.type_uses.insert(s.clone());
                }
                PTy::Named(s)
            }
            _ => return self.err("expected type"),
        };
        self.bump();
        Ok(if self.eat("*") { PTy::Ptr(Box::new(base)) } else { base })
    }

    /// Whether a statement starting here is a declaration.
    fn at_decl(&self) -> bool {
        let Tok::Ident(s) = self.peek() else { return false };
        if is_builtin_type(s) || self.is_typedef(s) {
            return true;
        }
        if KEYWORDS.contains(&s.as_str()) || self.is_value(s) {
            return false;
        }
        match (self.peek_at(1), self.peek_at(2), self.peek_at(3)) {
            (Tok::Ident(_), _, _) => true,
            (Tok::Punct("*"), Tok::Ident(_), Tok::Punct(";" | "=")) => true,
            _ => false,
        }
    }

    fn unit(&mut self) -> R<AmbiguousAst> {
        loop {
            if self.is_kw("typedef") {
                self.bump();
                let ty = self.ty(true)?;
                let name = self.ident()?;
                self.expect(";")?;
                self.typedefs.push((name, ty));
            } else if self.is_kw("extern") {
                self.bump();
                let ret = self.ty(true)?;
                let name = self.ident()?;
                self.expect("(")?;
                let mut params = Vec::new();
                if self.is_kw("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
                    self.bump();
                }
                while !self.is_punct(")") {
                    params.push(self.ty(true)?);
                    if matches!(self.peek(), Tok::Ident(_)) {
                        self.ident()?;
                    }
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(")")?;
                self.expect(";")?;
                self.externs.push(PExtern { name, params, ret });
            } else {
                break;
            }
        }
        let ret = self.ty(true)?;
        let name = self.ident()?;
        self.expect("(")?;
        self.scopes.push(HashSet::new());
        let mut params = Vec::new();
        if self.is_kw("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
            self.bump();
        }
        while !self.is_punct(")") {
            let ty = self.ty(true)?;
            let pname = self.ident()?;
            self.scopes.last_mut().expect("scope").insert(pname.clone());
            params.push((pname, ty));
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        let body = self.block()?;
        if !matches!(self.peek(), Tok::Eof) {
            return self.err("expected end of input");
        }
        Ok(AmbiguousAst {
            typedefs: std::mem::take(&mut self.typedefs),
            externs: std::mem::take(&mut self.externs),
            name,
            params,
            ret,
            body,
            unknowns: std::mem::take(&mut self.unknowns),
        })
    }

    fn block(&mut self) -> R<Vec<PStmt>> {
        self.expect("{")?;
        self.scopes.push(HashSet::new());
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.err("unexpected end of input");
            }
            out.push(self.stmt()?);
        }
        self.bump();
        self.scopes.pop();
        Ok(out)
    }

    fn body(&mut self) -> R<Vec<PStmt>> {
        if self.is_punct("{") {
            self.block()
        } else {
            self.scopes.push(HashSet::new());
            let s = self.stmt()?;
            self.scopes.pop();
            Ok(vec![s])
        }
    }

    fn stmt(&mut self) -> R<PStmt> {
        if self.is_kw("if") {
            self.bump();
            self.expect("(")?;
            let cond = self.expr()?;
            self.expect(")")?;
            let then = self.body()?;
            let els = if self.is_kw("else") {
                self.bump();
                Some(self.body()?)
            } else {
                None
            };
            return Ok(PStmt::If { cond, then, els });
        }
        if self.is_kw("while") {
            self.bump();
            self.expect("(")?;
            let cond = self.expr()?;
            self.expect(")")?;
            let body = self.body()?;
            return Ok(PStmt::While { cond, body });
        }
        if self.is_kw("for") {
            self.bump();
            self.expect("(")?;
            self.scopes.push(HashSet::new());
            let init = if self.is_punct(";") {
                None
            } else if self.at_decl() {
                Some(Box::new(self.decl()?))
            } else {
                Some(Box::new(self.assign()?))
            };
            self.expect(";")?;
            let cond = if self.is_punct(";") { None } else { Some(self.expr()?) };
            self.expect(";")?;
            let step = if self.is_punct(")") { None } else { Some(Box::new(self.assign()?)) };
            self.expect(")")?;
            let body = self.body()?;
            self.scopes.pop();
            return Ok(PStmt::For { init, cond, step, body });
        }
        if self.is_kw("return") {
            self.bump();
            if self.eat(";") {
                return Ok(PStmt::Return(None));
            }
            let e = self.expr()?;
            self.expect(";")?;
            return Ok(PStmt::Return(Some(e)));
        }
        if self.at_decl() {
            let s = self.decl()?;
            self.expect(";")?;
            return Ok(s);
        }
        let e = self.expr()?;
        let s = if self.eat("=") { PStmt::Assign { target: e, value: self.expr()? } } else { PStmt::Expr(e) };
        self.expect(";")?;
        Ok(s)
    }

    fn decl(&mut self) -> R<PStmt> {
        let ty = self.ty(true)?;
        let name = self.ident()?;
        let init = if self.eat("=") { Some(self.expr()?) } else { None };
        self.scopes.last_mut().expect("scope").insert(name.clone());
        Ok(PStmt::Decl { name, ty, init })
    }

    fn assign(&mut self) -> R<PStmt> {
        let target = self.expr()?;
        self.expect("=")?;
        Ok(PStmt::Assign { target, value: self.expr()? })
    }

    /// A full expression. An undecided ambiguity raised inside it is
    /// resolved here by parsing the expression once per reading.
    fn expr(&mut self) -> R<PExpr> {
        let start = self.pos;
        match self.binary(1) {
            Err(PErr::Ambiguous(site)) if !self.forced.contains_key(&site) => {
                let Tok::Ident(name) = self.toks[site + 1].tok.clone() else { unreachable!("site is `(name)`") };
                let mut readings: Vec<Option<(PExpr, usize)>> = Vec::new();
                let mut first_err = None;
                for cast in [false, true] {
                    self.forced.insert(site, cast);
                    self.pos = start;
                    match self.expr() {
                        Ok(e) => readings.push(Some((e, self.pos))),
                        Err(e) => {
                            first_err.get_or_insert(e);
                            readings.push(None);
                        }
                    }
                }
                self.forced.remove(&site);
                let end = readings.iter().flatten().map(|r| r.1).max();
                let Some(end) = end else { return Err(first_err.expect("a reading failed")) };
                self.pos = end;
                let mut keep = readings.into_iter().map(|r| r.filter(|r| r.1 == end).map(|r| Box::new(r.0)));
                let value = keep.next().flatten();
                let cast = keep.next().flatten();
                Ok(PExpr::Ambig { name, lattice: Lattice::Unknown, value, cast })
            }
            r => r,
        }
    }

    fn peek_binop(&self) -> Option<BinOp> {
        let Tok::Punct(p) = self.peek() else { return None };
        BinOp::ALL.iter().copied().find(|op| op.symbol() == *p)
    }

    fn binary(&mut self, min_prec: u8) -> R<PExpr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = PExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> R<PExpr> {
        if self.eat("-") {
            return Ok(PExpr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat("!") {
            return Ok(PExpr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        if self.eat("*") {
            return Ok(PExpr::Deref(Box::new(self.unary()?)));
        }
        if self.eat("&") {
            return Ok(PExpr::AddrOf(self.ident()?));
        }
        if self.is_punct("(") {
            if let Some(cast) = self.cast_here()? {
                if cast {
                    let definite = !self.forced.contains_key(&self.pos);
                    self.bump();
                    let t = self.ty(definite)?;
                    self.expect(")")?;
                    return Ok(PExpr::Cast(t, Box::new(self.unary()?)));
                }
            }
        }
        self.postfix()
    }

    /// At `(`: Some(true) for a cast, Some(false) for a parenthesized
    /// expression, None when not a candidate. Raises `Ambiguous` for an
    /// undecided site.
    fn cast_here(&self) -> R<Option<bool>> {
        let site = self.pos;
        let (a, b, c) = (self.peek_at(1), self.peek_at(2), self.peek_at(3));
        let Tok::Ident(s) = a else { return Ok(None) };
        if is_builtin_type(s) || self.is_typedef(s) {
            return Ok(Some(true));
        }
        if KEYWORDS.contains(&s.as_str()) || self.is_value(s) {
            return Ok(Some(false));
        }
        match (b, c) {
            (Tok::Punct("*"), Tok::Punct(")")) => Ok(Some(true)),
            (Tok::Punct(")"), Tok::Ident(_) | Tok::Int(_) | Tok::Float(_) | Tok::Str(_)) => Ok(Some(true)),
            (Tok::Punct(")"), Tok::Punct("(" | "!" | "&")) => Ok(Some(true)),
            (Tok::Punct(")"), Tok::Punct("*" | "-")) => match self.forced.get(&site) {
                Some(&c) => Ok(Some(c)),
                None => Err(PErr::Ambiguous(site)),
            },
            _ => Ok(Some(false)),
        }
    }

    fn postfix(&mut self) -> R<PExpr> {
        let mut e = self.primary()?;
        while self.eat("[") {
            let idx = self.expr()?;
            self.expect("]")?;
            e = PExpr::Index(Box::new(e), Box::new(idx));
        }
        Ok(e)
    }

    fn primary(&mut self) -> R<PExpr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                if v > i32::MAX as u64 {
                    return self.err("integer literal out of range");
                }
                self.bump();
                Ok(PExpr::Int(v as i32))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(PExpr::Float(v))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(PExpr::Str(s))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.eat("(") {
                    let known = self.externs.iter().any(|e| e.name == name) || self.is_value(&name);
                    if !known {
                        self.note_unknown(&name, UnknownKind::Function);
                    }
                    let mut args = Vec::new();
                    while !self.is_punct(")") {
                        args.push(self.expr()?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                    self.expect(")")?;
                    return Ok(PExpr::Call(name, args));
                }
                Ok(PExpr::Var(name))
            }
            _ => self.err("expected expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn only_stmt(src: &str) -> PStmt {
        let a = parse_partial(src).unwrap();
        a.body.into_iter().last().unwrap()
    }

    #[test]
    fn ambiguity_retained_for_unknown_name() {
        let a = parse_partial("int f(int b){ (a)*b; return 0; }").unwrap();
        assert_eq!(a.ambiguities(), vec![("a".to_string(), Lattice::Unknown)]);
        let PStmt::Expr(PExpr::Ambig { value, cast, .. }) = &a.body[0] else { panic!() };
        assert!(matches!(value.as_deref(), Some(PExpr::Binary(BinOp::Mul, ..))));
        assert!(matches!(cast.as_deref(), Some(PExpr::Cast(PTy::Named(n), _)) if n == "a"));
    }

    #[test]
    fn value_in_scope_forces_multiplication() {
        let s = only_stmt("int f(int b){ int a; (a)*b; }");
        assert!(matches!(s, PStmt::Expr(PExpr::Binary(BinOp::Mul, ..))));
    }

    #[test]
    fn type_use_elsewhere_forces_cast() {
        let a = parse_partial("int f(int *b){ mytype x = 1; (mytype)*b; return x; }").unwrap();
        assert_eq!(a.ambiguities(), vec![("mytype".to_string(), Lattice::MustBeType)]);
    }

    #[test]
    fn readings_cover_whole_expression() {
        let s = only_stmt("int f(int b, int c){ return (a)-b*c; }");
        let PStmt::Return(Some(PExpr::Ambig { value: Some(v), cast: Some(c), .. })) = s else { panic!() };
        assert!(matches!(*v, PExpr::Binary(BinOp::Sub, _, _)));
        assert!(matches!(*c, PExpr::Binary(BinOp::Mul, _, _)));
    }

    #[test]
    fn unknowns_in_first_use_order() {
        let a = parse_partial("t1 f(t2 x){ g(x); t1 y = h(1); return y; }").unwrap();
        assert_eq!(a.unknown_identifiers(), vec!["t1", "t2", "g", "h"]);
        assert_eq!(a.unknowns[2].1, UnknownKind::Function);
    }

    #[test]
    fn declarations_with_named_types() {
        let s = only_stmt("int f(){ word *p = 0; }");
        assert!(matches!(s, PStmt::Decl { ty: PTy::Ptr(_), .. }));
        assert!(parse_partial("int f( { }").is_err());
    }
}
