//! Single-pass parser and type checker. Declarations precede uses, so every
//! expression is typed as soon as it is parsed.

use std::collections::{HashMap, HashSet};

use super::ast::*;
use super::lexer::{tokenize, Tok, Token, KEYWORDS, UNSUPPORTED_KEYWORDS};
use super::ty::Ty;
use super::FrontendError;

pub const MAX_IDENT_LEN: usize = 32;
pub const MAX_PARAMS: usize = 6;

/// Parses and type-checks a function definition, optionally preceded by
/// `typedef` and `extern` declarations.
pub fn parse_function(text: &str) -> Result<Ast, FrontendError> {
    let toks = tokenize(text)?;
    Parser::new(&toks).unit()
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    typedefs: Vec<Typedef>,
    externs: Vec<Extern>,
    scopes: Vec<HashMap<String, Ty>>,
    declared: HashSet<String>,
    fn_name: String,
    ret: Ty,
}

type PResult<T> = Result<T, FrontendError>;

impl<'a> Parser<'a> {
    fn new(toks: &'a [Token]) -> Self {
        Parser {
            toks,
            pos: 0,
            typedefs: Vec::new(),
            externs: Vec::new(),
            scopes: Vec::new(),
            declared: HashSet::new(),
            fn_name: String::new(),
            ret: Ty::Void,
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, msg: &str) -> PResult<T> {
        let (l, c) = self.here();
        Err(FrontendError::syntax(l, c, msg))
    }

    fn type_err<T>(&self, msg: &str) -> PResult<T> {
        let (l, c) = self.here();
        Err(FrontendError::type_error(l, c, msg))
    }

    fn unsupported<T>(&self, msg: &str) -> PResult<T> {
        let (l, c) = self.here();
        Err(FrontendError::unsupported(l, c, msg))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> PResult<()> {
        if self.eat(p) {
            Ok(())
        } else {
            self.syntax(&format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                if KEYWORDS.contains(&s.as_str()) {
                    return self.syntax(&format!("unexpected keyword `{s}`"));
                }
                if UNSUPPORTED_KEYWORDS.contains(&s.as_str()) {
                    return self.unsupported(&format!("keyword `{s}`"));
                }
                if s.len() > MAX_IDENT_LEN {
                    return self.unsupported("identifier longer than 32 characters");
                }
                self.bump();
                Ok(s)
            }
            t => self.syntax(&format!("expected identifier, found {}", describe(&t))),
        }
    }

    fn typedef(&self, name: &str) -> Option<&Typedef> {
        self.typedefs.iter().find(|t| t.name == name)
    }

    /// Whether the current token begins a type.
    fn at_type(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => {
                matches!(s.as_str(), "int" | "double" | "float" | "void")
                    || UNSUPPORTED_KEYWORDS.contains(&s.as_str())
                    || self.typedef(s).is_some()
            }
            _ => false,
        }
    }

    /// `base ['*']`
    fn ty(&mut self) -> PResult<Ty> {
        let base = match self.peek().clone() {
            Tok::Ident(s) => match s.as_str() {
                "int" => Ty::Int,
                "double" | "float" => Ty::Float,
                "void" => Ty::Void,
                _ if UNSUPPORTED_KEYWORDS.contains(&s.as_str()) => {
                    return self.unsupported(&format!("type keyword `{s}`"))
                }
                _ => match self.typedef(&s) {
                    Some(t) => Ty::Alias(s.clone(), Box::new(t.ty.clone())),
                    None => return self.type_err(&format!("unknown type name `{s}`")),
                },
            },
            t => return self.syntax(&format!("expected type, found {}", describe(&t))),
        };
        self.bump();
        if self.eat("*") {
            if self.is_punct("*") {
                return self.unsupported("pointer to pointer");
            }
            return match base.resolve() {
                Ty::Int | Ty::Float => Ok(Ty::ptr(base)),
                Ty::Void => self.unsupported("void pointer"),
                _ => self.unsupported("pointer to pointer"),
            };
        }
        Ok(base)
    }

    fn unit(mut self) -> PResult<Ast> {
        loop {
            if self.is_kw("typedef") {
                self.bump();
                let ty = self.ty()?;
                if ty.is_void() {
                    return self.unsupported("typedef of void");
                }
                let name = self.ident()?;
                if self.typedef(&name).is_some() || self.externs.iter().any(|e| e.name == name) {
                    return self.type_err(&format!("redefinition of `{name}`"));
                }
                self.expect(";")?;
                self.typedefs.push(Typedef { name, ty });
            } else if self.is_kw("extern") {
                self.bump();
                let ret = self.ty()?;
                let name = self.ident()?;
                if self.typedef(&name).is_some() || self.externs.iter().any(|e| e.name == name) {
                    return self.type_err(&format!("redefinition of `{name}`"));
                }
                self.expect("(")?;
                let mut params = Vec::new();
                if self.is_kw("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
                    self.bump();
                }
                while !self.is_punct(")") {
                    let t = self.ty()?;
                    if t.is_void() {
                        return self.type_err("void parameter");
                    }
                    if matches!(self.peek(), Tok::Ident(_)) {
                        self.ident()?;
                    }
                    params.push(t);
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(")")?;
                self.expect(";")?;
                self.externs.push(Extern { name, params, ret });
            } else {
                break;
            }
        }
        let ret = self.ty()?;
        let name = self.ident()?;
        if self.typedef(&name).is_some() || self.externs.iter().any(|e| e.name == name) {
            return self.type_err(&format!("redefinition of `{name}`"));
        }
        self.fn_name = name.clone();
        self.ret = ret.clone();
        self.expect("(")?;
        self.scopes.push(HashMap::new());
        let mut params = Vec::new();
        if self.is_kw("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
            self.bump();
        }
        while !self.is_punct(")") {
            let ty = self.ty()?;
            if ty.is_void() {
                return self.type_err("void parameter");
            }
            let pname = self.ident()?;
            self.declare(&pname, ty.clone())?;
            params.push(Param { name: pname, ty });
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        if params.len() > MAX_PARAMS {
            return self.unsupported("more than 6 parameters");
        }
        let body = self.block()?;
        if !ret.is_void() && !always_returns(&body) {
            return self.type_err("control reaches end of non-void function");
        }
        if !matches!(self.peek(), Tok::Eof) {
            return self.syntax("expected end of input after function definition");
        }
        Ok(Ast { typedefs: self.typedefs, externs: self.externs, name, params, ret, body })
    }

    fn declare(&mut self, name: &str, ty: Ty) -> PResult<()> {
        if self.declared.contains(name)
            || name == self.fn_name
            || self.typedef(name).is_some()
            || self.externs.iter().any(|e| e.name == name)
        {
            return self.type_err(&format!("redeclaration of `{name}`"));
        }
        self.declared.insert(name.to_string());
        self.scopes.last_mut().expect("scope").insert(name.to_string(), ty);
        Ok(())
    }

    fn lookup(&self, name: &str) -> Option<&Ty> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    /// `{ stmt* }`
    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect("{")?;
        self.scopes.push(HashMap::new());
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.syntax("unexpected end of input, expected `}`");
            }
            out.push(self.stmt()?);
        }
        self.bump();
        self.scopes.pop();
        Ok(out)
    }

    /// A braced block or a single statement in its own scope.
    fn body(&mut self) -> PResult<Vec<Stmt>> {
        if self.is_punct("{") {
            self.block()
        } else {
            self.scopes.push(HashMap::new());
            let s = self.stmt()?;
            self.scopes.pop();
            Ok(vec![s])
        }
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        if self.is_punct("{") {
            return self.unsupported("nested block");
        }
        if self.is_kw("if") {
            self.bump();
            self.expect("(")?;
            let cond = self.condition()?;
            self.expect(")")?;
            let then = self.body()?;
            let els = if self.is_kw("else") {
                self.bump();
                Some(self.body()?)
            } else {
                None
            };
            return Ok(Stmt::If { cond, then, els });
        }
        if self.is_kw("while") {
            self.bump();
            self.expect("(")?;
            let cond = self.condition()?;
            self.expect(")")?;
            let body = self.body()?;
            return Ok(Stmt::While { cond, body });
        }
        if self.is_kw("for") {
            self.bump();
            self.expect("(")?;
            self.scopes.push(HashMap::new());
            let init = if self.is_punct(";") {
                None
            } else if self.at_type() {
                Some(Box::new(self.decl_no_semi()?))
            } else {
                Some(Box::new(self.assign_no_semi()?))
            };
            self.expect(";")?;
            let cond = if self.is_punct(";") { None } else { Some(self.condition()?) };
            self.expect(";")?;
            let step = if self.is_punct(")") { None } else { Some(Box::new(self.assign_no_semi()?)) };
            self.expect(")")?;
            let body = self.body()?;
            self.scopes.pop();
            return Ok(Stmt::For { init, cond, step, body });
        }
        if self.is_kw("return") {
            self.bump();
            if self.eat(";") {
                if !self.ret.is_void() {
                    return self.type_err("non-void function must return a value");
                }
                return Ok(Stmt::Return(None));
            }
            let e = self.expr()?;
            if self.ret.is_void() {
                return self.type_err("void function cannot return a value");
            }
            if !assignable(&self.ret, &e.ty) {
                return self.type_err(&format!("cannot return `{}` from function returning `{}`", e.ty, self.ret));
            }
            self.expect(";")?;
            return Ok(Stmt::Return(Some(e)));
        }
        if self.is_kw("else") {
            return self.syntax("`else` without `if`");
        }
        if self.at_type() {
            let s = self.decl_no_semi()?;
            self.expect(";")?;
            return Ok(s);
        }
        let e = self.expr_allow_void()?;
        if self.is_punct("=") {
            let s = self.finish_assign(e)?;
            self.expect(";")?;
            return Ok(s);
        }
        self.expect(";")?;
        Ok(Stmt::Expr(e))
    }

    fn decl_no_semi(&mut self) -> PResult<Stmt> {
        let ty = self.ty()?;
        if ty.is_void() {
            return self.type_err("variable of type void");
        }
        let name = self.ident()?;
        if self.is_punct("[") {
            return self.unsupported("local array");
        }
        let init = if self.eat("=") {
            let e = self.expr()?;
            if !assignable(&ty, &e.ty) {
                return self.type_err(&format!("cannot initialize `{ty}` with `{}`", e.ty));
            }
            Some(e)
        } else {
            None
        };
        if self.is_punct(",") {
            return self.unsupported("multiple declarators");
        }
        self.declare(&name, ty.clone())?;
        Ok(Stmt::Decl { name, ty, init })
    }

    fn assign_no_semi(&mut self) -> PResult<Stmt> {
        let target = self.expr()?;
        if !self.is_punct("=") {
            return self.syntax("expected assignment");
        }
        self.finish_assign(target)
    }

    fn finish_assign(&mut self, target: Expr) -> PResult<Stmt> {
        self.expect("=")?;
        if !matches!(target.kind, ExprKind::Var(_) | ExprKind::Index(..) | ExprKind::Deref(_)) {
            return self.type_err("assignment target is not an lvalue");
        }
        let value = self.expr()?;
        if self.is_punct("=") {
            return self.unsupported("chained assignment");
        }
        if !assignable(&target.ty, &value.ty) {
            return self.type_err(&format!("cannot assign `{}` to `{}`", value.ty, target.ty));
        }
        Ok(Stmt::Assign { target, value })
    }

    fn condition(&mut self) -> PResult<Expr> {
        let e = self.expr()?;
        if !e.ty.is_numeric() {
            return self.type_err("condition must be numeric");
        }
        Ok(e)
    }

    fn expr(&mut self) -> PResult<Expr> {
        let e = self.expr_allow_void()?;
        if e.ty.is_void() {
            return self.type_err("void value used in expression");
        }
        Ok(e)
    }

    fn expr_allow_void(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        let Tok::Punct(p) = self.peek() else { return None };
        BinOp::ALL.iter().copied().find(|op| op.symbol() == *p)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = self.make_binary(op, lhs, rhs)?;
        }
        Ok(lhs)
    }

    fn make_binary(&self, op: BinOp, a: Expr, b: Expr) -> PResult<Expr> {
        let (ta, tb) = (a.ty.clone(), b.ty.clone());
        if !ta.is_numeric() || !tb.is_numeric() {
            return self.type_err(&format!("operator `{}` needs numeric operands", op.symbol()));
        }
        let ty = if op.is_comparison() || op.is_logical() {
            Ty::Int
        } else if op == BinOp::Rem {
            if ta != Ty::Int || tb != Ty::Int {
                return self.type_err("operator `%` needs int operands");
            }
            Ty::Int
        } else if ta == Ty::Float || tb == Ty::Float {
            Ty::Float
        } else {
            Ty::Int
        };
        Ok(Expr::new(ExprKind::Binary(op, Box::new(a), Box::new(b)), ty))
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat("-") {
            let e = self.unary()?;
            if !e.ty.is_numeric() {
                return self.type_err("unary `-` needs a numeric operand");
            }
            let ty = e.ty.clone();
            return Ok(Expr::new(ExprKind::Unary(UnOp::Neg, Box::new(e)), ty));
        }
        if self.eat("!") {
            let e = self.unary()?;
            if !e.ty.is_numeric() {
                return self.type_err("`!` needs a numeric operand");
            }
            return Ok(Expr::new(ExprKind::Unary(UnOp::Not, Box::new(e)), Ty::Int));
        }
        if self.eat("*") {
            let e = self.unary()?;
            let Some(elem) = e.ty.elem() else {
                return self.type_err("dereference of non-pointer");
            };
            return Ok(Expr::new(ExprKind::Deref(Box::new(e)), elem));
        }
        if self.eat("&") {
            let name = self.ident()?;
            let Some(ty) = self.lookup(&name).cloned() else {
                return self.type_err(&format!("undeclared identifier `{name}`"));
            };
            if !ty.is_numeric() {
                return self.unsupported("address of pointer variable");
            }
            if self.is_punct("[") || self.is_punct("(") {
                return self.unsupported("address of non-variable");
            }
            return Ok(Expr::new(ExprKind::AddrOf(name), Ty::ptr(ty.resolve())));
        }
        if self.is_punct("(") {
            let save = self.pos;
            self.bump();
            if self.at_type() {
                let target = self.ty()?;
                self.expect(")")?;
                let e = self.unary()?;
                let ok = (target.is_numeric() && e.ty.is_numeric())
                    || (target.is_ptr() && e.ty.is_ptr() && target.resolve() == e.ty.resolve());
                if !ok {
                    return self.type_err(&format!("invalid cast from `{}` to `{target}`", e.ty));
                }
                let ty = target.resolve();
                return Ok(Expr::new(ExprKind::Cast(target, Box::new(e)), ty));
            }
            self.pos = save;
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.eat("[") {
            let idx = self.expr()?;
            self.expect("]")?;
            let Some(elem) = e.ty.elem() else {
                return self.type_err("indexing a non-pointer");
            };
            if idx.ty != Ty::Int {
                return self.type_err("array index must be int");
            }
            e = Expr::new(ExprKind::Index(Box::new(e), Box::new(idx)), elem);
        }
        if self.is_punct("(") {
            return self.unsupported("call through expression");
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                if v > i32::MAX as u64 {
                    return self.unsupported("integer literal out of int range");
                }
                self.bump();
                Ok(Expr::int(v as i32))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::float(v))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::new(ExprKind::StrLit(s), Ty::ptr(Ty::Int)))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let (line, col) = self.here();
                let name = self.ident()?;
                if self.is_punct("(") {
                    return self.call(name);
                }
                match self.lookup(&name) {
                    Some(ty) => Ok(Expr::var(&name, ty.clone())),
                    None if self.typedef(&name).is_some() => {
                        Err(FrontendError::syntax(line, col, &format!("unexpected type name `{name}`")))
                    }
                    None => Err(FrontendError::type_error(line, col, &format!("undeclared identifier `{name}`"))),
                }
            }
            t => self.syntax(&format!("expected expression, found {}", describe(&t))),
        }
    }

    fn call(&mut self, name: String) -> PResult<Expr> {
        if name == self.fn_name {
            return self.unsupported("recursion");
        }
        let Some(ext) = self.externs.iter().find(|e| e.name == name).cloned() else {
            return self.type_err(&format!("call to undeclared function `{name}`"));
        };
        self.expect("(")?;
        let mut args = Vec::new();
        while !self.is_punct(")") {
            args.push(self.expr()?);
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        if args.len() != ext.params.len() {
            return self.type_err(&format!("`{name}` expects {} arguments", ext.params.len()));
        }
        for (a, p) in args.iter().zip(&ext.params) {
            if !assignable(p, &a.ty) {
                return self.type_err(&format!("cannot pass `{}` as `{p}`", a.ty));
            }
        }
        Ok(Expr::new(ExprKind::Call(name, args), ext.ret.resolve()))
    }
}

/// Assignment compatibility: numeric types convert freely, pointers must match.
pub fn assignable(dst: &Ty, src: &Ty) -> bool {
    let (d, s) = (dst.resolve(), src.resolve());
    (d.is_numeric() && s.is_numeric()) || (d.is_ptr() && d == s)
}

fn is_const_true(e: &Expr) -> bool {
    match e.kind {
        ExprKind::IntLit(v) => v != 0,
        ExprKind::FloatLit(v) => v != 0.0,
        _ => false,
    }
}

/// Whether control can never fall off the end of `stmts`.
pub fn always_returns(stmts: &[Stmt]) -> bool {
    stmts.iter().any(|s| match s {
        Stmt::Return(_) => true,
        Stmt::If { then, els: Some(els), .. } => always_returns(then) && always_returns(els),
        Stmt::While { cond, .. } => is_const_true(cond),
        Stmt::For { cond: None, .. } => true,
        Stmt::For { cond: Some(c), .. } => is_const_true(c),
        _ => false,
    })
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(v) => format!("`{v}`"),
        Tok::Str(_) => "string literal".into(),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}
