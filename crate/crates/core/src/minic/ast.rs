//! Typed mini-C syntax tree.

use super::ty::{Signature, Ty};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }

    pub fn is_arith(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem)
    }

    pub const ALL: [BinOp; 13] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::And,
        BinOp::Or,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    IntLit(i32),
    FloatLit(f64),
    StrLit(String),
    Var(String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Deref(Box<Expr>),
    AddrOf(String),
    /// Target type as written (may be an alias).
    Cast(Ty, Box<Expr>),
    Call(String, Vec<Expr>),
}

/// An expression with its resolved (alias-free) type.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub ty: Ty,
}

impl Expr {
    pub fn new(kind: ExprKind, ty: Ty) -> Expr {
        Expr { kind, ty }
    }

    pub fn int(v: i32) -> Expr {
        Expr::new(ExprKind::IntLit(v), Ty::Int)
    }

    pub fn float(v: f64) -> Expr {
        Expr::new(ExprKind::FloatLit(v), Ty::Float)
    }

    pub fn var(name: &str, ty: Ty) -> Expr {
        Expr::new(ExprKind::Var(name.to_string()), ty.resolve())
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self.kind,
            ExprKind::IntLit(_) | ExprKind::FloatLit(_) | ExprKind::Var(_) | ExprKind::StrLit(_)
        )
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// Pre-order traversal.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Unary(_, e) | ExprKind::Deref(e) | ExprKind::Cast(_, e) => e.walk(f),
            ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                a.walk(f);
                b.walk(f);
            }
            ExprKind::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    /// `T name [= init];` The declared type is kept as written.
    Decl { name: String, ty: Ty, init: Option<Expr> },
    /// `target = value;` where target is a variable, index or dereference.
    Assign { target: Expr, value: Expr },
    If { cond: Expr, then: Vec<Stmt>, els: Option<Vec<Stmt>> },
    While { cond: Expr, body: Vec<Stmt> },
    For { init: Option<Box<Stmt>>, cond: Option<Expr>, step: Option<Box<Stmt>>, body: Vec<Stmt> },
    Return(Option<Expr>),
    Expr(Expr),
}

impl Stmt {
    /// Visits this statement and every nested statement, pre-order.
    pub fn walk(&self, f: &mut impl FnMut(&Stmt)) {
        f(self);
        match self {
            Stmt::If { then, els, .. } => {
                then.iter().for_each(|s| s.walk(f));
                if let Some(e) = els {
                    e.iter().for_each(|s| s.walk(f));
                }
            }
            Stmt::While { body, .. } => body.iter().for_each(|s| s.walk(f)),
            Stmt::For { init, step, body, .. } => {
                if let Some(s) = init {
                    s.walk(f);
                }
                if let Some(s) = step {
                    s.walk(f);
                }
                body.iter().for_each(|s| s.walk(f));
            }
            _ => {}
        }
    }

    /// Expressions appearing directly in this statement (not nested statements).
    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            Stmt::Decl { init, .. } => init.iter().collect(),
            Stmt::Assign { target, value } => vec![target, value],
            Stmt::If { cond, .. } | Stmt::While { cond, .. } => vec![cond],
            Stmt::For { cond, .. } => cond.iter().collect(),
            Stmt::Return(e) => e.iter().collect(),
            Stmt::Expr(e) => vec![e],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Typedef {
    pub name: String,
    pub ty: Ty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extern {
    pub name: String,
    pub params: Vec<Ty>,
    pub ret: Ty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: Ty,
}

/// A type-checked function definition together with the typedef and extern
/// declarations it depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct Ast {
    pub typedefs: Vec<Typedef>,
    pub externs: Vec<Extern>,
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Ty,
    pub body: Vec<Stmt>,
}

impl Ast {
    pub fn signature(&self) -> Signature {
        Signature {
            name: self.name.clone(),
            params: self.params.iter().map(|p| p.ty.resolve()).collect(),
            ret: self.ret.resolve(),
        }
    }

    /// Visits every statement in the body, pre-order.
    pub fn walk_stmts(&self, f: &mut impl FnMut(&Stmt)) {
        self.body.iter().for_each(|s| s.walk(f));
    }

    /// Visits every expression in the body.
    pub fn walk_exprs(&self, f: &mut impl FnMut(&Expr)) {
        self.walk_stmts(&mut |s| {
            for e in s.exprs() {
                e.walk(f);
            }
        });
    }

    /// Names of variables whose address is taken with `&`.
    pub fn address_taken(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.walk_exprs(&mut |e| {
            if let ExprKind::AddrOf(n) = &e.kind {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        });
        out
    }

    /// True when the body contains no loops.
    pub fn is_straight_line(&self) -> bool {
        let mut loops = false;
        self.walk_stmts(&mut |s| {
            if matches!(s, Stmt::While { .. } | Stmt::For { .. }) {
                loops = true;
            }
        });
        !loops
    }

    /// A copy without typedef and extern declarations; the text a decompiler
    /// is expected to reproduce.
    pub fn without_prelude(&self) -> Ast {
        Ast { typedefs: Vec::new(), externs: Vec::new(), ..self.clone() }
    }
}
