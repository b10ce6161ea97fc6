//! Source-level passes run at O2: unrolling of short counted loops, constant
//! and copy propagation with folding, branch simplification and dead-store
//! elimination. Every pass preserves trap behaviour exactly: nothing that can
//! trap is folded away or removed.

use std::collections::{HashMap, HashSet};

use crate::exec::f2i;
use crate::minic::{always_returns, Ast, BinOp, Expr, ExprKind, Stmt, Ty, UnOp};

pub const MAX_UNROLL: usize = 4;

pub fn optimize(ast: &Ast) -> Ast {
    let taken: HashSet<String> = ast.address_taken().into_iter().collect();
    let mut out = ast.clone();
    let body = unroll_block(std::mem::take(&mut out.body), &taken);
    let body = Propagator { taken: &taken }.block(body, &mut Env::new());
    out.body = dse_block(body, &mut HashSet::new(), &taken);
    out
}

// ------------------------------------------------------------- unrolling

fn unroll_block(stmts: Vec<Stmt>, taken: &HashSet<String>) -> Vec<Stmt> {
    let mut out = Vec::new();
    for s in stmts {
        match s {
            Stmt::If { cond, then, els } => out.push(Stmt::If {
                cond,
                then: unroll_block(then, taken),
                els: els.map(|e| unroll_block(e, taken)),
            }),
            Stmt::While { cond, body } => out.push(Stmt::While { cond, body: unroll_block(body, taken) }),
            Stmt::For { init, cond, step, body } => {
                let body = unroll_block(body, taken);
                match trip_count(init.as_deref(), cond.as_ref(), step.as_deref(), &body, taken) {
                    Some(n) => {
                        out.push(*init.unwrap());
                        let step = *step.unwrap();
                        for _ in 0..n {
                            out.extend(body.iter().cloned());
                            out.push(step.clone());
                        }
                    }
                    None => out.push(Stmt::For { init, cond, step, body }),
                }
            }
            s => out.push(s),
        }
    }
    out
}

fn writes_var(stmts: &[Stmt], name: &str) -> bool {
    let mut hit = false;
    for s in stmts {
        s.walk(&mut |s| match s {
            Stmt::Decl { name: n, .. } if n == name => hit = true,
            Stmt::Assign { target: Expr { kind: ExprKind::Var(n), .. }, .. } if n == name => hit = true,
            _ => {}
        });
    }
    hit
}

/// The iteration count of `for (i = a; i OP b; i = i +/- k)` when it is at
/// most `MAX_UNROLL` and the body leaves `i` alone.
fn trip_count(
    init: Option<&Stmt>,
    cond: Option<&Expr>,
    step: Option<&Stmt>,
    body: &[Stmt],
    taken: &HashSet<String>,
) -> Option<usize> {
    let (var, start) = match init? {
        Stmt::Decl { name, ty, init: Some(Expr { kind: ExprKind::IntLit(v), .. }) } if ty.resolve() == Ty::Int => {
            (name.clone(), *v)
        }
        Stmt::Assign { target: Expr { kind: ExprKind::Var(n), ty: Ty::Int }, value: Expr { kind: ExprKind::IntLit(v), .. } } => {
            (n.clone(), *v)
        }
        _ => return None,
    };
    if taken.contains(&var) || writes_var(body, &var) {
        return None;
    }
    let ExprKind::Binary(op, lhs, rhs) = &cond?.kind else { return None };
    let (ExprKind::Var(cv), ExprKind::IntLit(bound)) = (&lhs.kind, &rhs.kind) else { return None };
    if *cv != var || rhs.ty != Ty::Int {
        return None;
    }
    let Stmt::Assign { target: Expr { kind: ExprKind::Var(sv), .. }, value } = step? else { return None };
    if *sv != var {
        return None;
    }
    let ExprKind::Binary(sop @ (BinOp::Add | BinOp::Sub), a, b) = &value.kind else { return None };
    let (ExprKind::Var(av), ExprKind::IntLit(k)) = (&a.kind, &b.kind) else { return None };
    if *av != var {
        return None;
    }
    let holds = |i: i32| match op {
        BinOp::Lt => i < *bound,
        BinOp::Le => i <= *bound,
        BinOp::Gt => i > *bound,
        BinOp::Ge => i >= *bound,
        BinOp::Ne => i != *bound,
        _ => false,
    };
    if !matches!(op, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Ne) {
        return None;
    }
    let mut i = start;
    for n in 0..=MAX_UNROLL {
        if !holds(i) {
            return Some(n);
        }
        i = if *sop == BinOp::Add { i.wrapping_add(*k) } else { i.wrapping_sub(*k) };
    }
    None
}

// ----------------------------------------------------------- propagation

#[derive(Debug, Clone, PartialEq)]
enum Known {
    Int(i32),
    Float(f64),
    Copy(String),
}

impl Known {
    fn same(&self, other: &Known) -> bool {
        match (self, other) {
            (Known::Float(a), Known::Float(b)) => a.to_bits() == b.to_bits(),
            (a, b) => a == b,
        }
    }
}

type Env = HashMap<String, Known>;

fn kill(env: &mut Env, name: &str) {
    env.remove(name);
    env.retain(|_, k| !matches!(k, Known::Copy(c) if c == name));
}

fn assigned_in(stmts: &[Stmt]) -> HashSet<String> {
    let mut out = HashSet::new();
    for s in stmts {
        s.walk(&mut |s| match s {
            Stmt::Decl { name, .. } => {
                out.insert(name.clone());
            }
            Stmt::Assign { target: Expr { kind: ExprKind::Var(n), .. }, .. } => {
                out.insert(n.clone());
            }
            _ => {}
        });
    }
    out
}

fn meet(a: &Env, b: &Env) -> Env {
    a.iter().filter(|(k, v)| b.get(*k).is_some_and(|w| w.same(v))).map(|(k, v)| (k.clone(), v.clone())).collect()
}

struct Propagator<'a> {
    taken: &'a HashSet<String>,
}

impl Propagator<'_> {
    fn tracked(&self, name: &str, ty: &Ty) -> bool {
        ty.is_numeric() && !self.taken.contains(name)
    }

    /// Records `name = value` after `value` has been rewritten.
    fn bind(&self, env: &mut Env, name: &str, ty: &Ty, value: Option<&Expr>) {
        kill(env, name);
        if !self.tracked(name, ty) {
            return;
        }
        let ty = ty.resolve();
        let known = match value.map(|e| &e.kind) {
            None => Some(if ty == Ty::Float { Known::Float(0.0) } else { Known::Int(0) }),
            Some(ExprKind::IntLit(v)) => Some(convert_lit(Known::Int(*v), &ty)),
            Some(ExprKind::FloatLit(v)) => Some(convert_lit(Known::Float(*v), &ty)),
            Some(ExprKind::Var(y)) if y != name && self.tracked(y, &value.unwrap().ty) && value.unwrap().ty == ty => {
                Some(Known::Copy(y.clone()))
            }
            _ => None,
        };
        if let Some(k) = known {
            env.insert(name.to_string(), k);
        }
    }

    fn block(&self, stmts: Vec<Stmt>, env: &mut Env) -> Vec<Stmt> {
        let mut out = Vec::new();
        for s in stmts {
            let ends = matches!(s, Stmt::Return(_));
            self.stmt(s, env, &mut out);
            if ends {
                // anything after a return is unreachable
                break;
            }
        }
        out
    }

    fn stmt(&self, s: Stmt, env: &mut Env, out: &mut Vec<Stmt>) {
        match s {
            Stmt::Decl { name, ty, init } => {
                let init = init.map(|e| fold(e, env));
                self.bind(env, &name, &ty, init.as_ref());
                out.push(Stmt::Decl { name, ty, init });
            }
            Stmt::Assign { target, value } => {
                let target = match target.kind {
                    ExprKind::Var(_) => target,
                    _ => fold(target, env),
                };
                let value = fold(value, env);
                if let ExprKind::Var(n) = &target.kind {
                    self.bind(env, n, &target.ty, Some(&value));
                }
                out.push(Stmt::Assign { target, value });
            }
            Stmt::If { cond, then, els } => {
                let cond = fold(cond, env);
                if let Some(t) = literal_truth(&cond) {
                    let chosen = if t { then } else { els.unwrap_or_default() };
                    out.extend(self.block(chosen, env));
                    return;
                }
                let mut env_then = env.clone();
                let then = self.block(then, &mut env_then);
                let mut env_else = env.clone();
                let els = els.map(|e| self.block(e, &mut env_else));
                *env = match (always_returns(&then), els.as_deref().is_some_and(always_returns)) {
                    (true, _) => env_else,
                    (false, true) => env_then,
                    _ => meet(&env_then, &env_else),
                };
                out.push(Stmt::If { cond, then, els });
            }
            Stmt::While { cond, body } => {
                for n in assigned_in(&body) {
                    kill(env, &n);
                }
                let cond = fold(cond, env);
                if literal_truth(&cond) == Some(false) {
                    return;
                }
                let body = self.block(body, &mut env.clone());
                out.push(Stmt::While { cond, body });
            }
            Stmt::For { init, cond, step, body } => {
                let init = init.map(|i| {
                    let mut v = Vec::new();
                    self.stmt(*i, env, &mut v);
                    v
                });
                let mut looped: Vec<Stmt> = body.clone();
                looped.extend(step.iter().map(|s| (**s).clone()));
                for n in assigned_in(&looped) {
                    kill(env, &n);
                }
                let cond = cond.map(|c| fold(c, env));
                let init = match init {
                    Some(mut v) if v.len() == 1 => Some(Box::new(v.pop().unwrap())),
                    Some(v) => {
                        // init folded away entirely or expanded; keep it outside
                        out.extend(v);
                        None
                    }
                    None => None,
                };
                if cond.as_ref().and_then(literal_truth) == Some(false) {
                    out.extend(init.map(|b| *b));
                    return;
                }
                let mut inner = env.clone();
                let body = self.block(body, &mut inner);
                let step = step.map(|s| {
                    let mut v = Vec::new();
                    self.stmt(*s, &mut inner, &mut v);
                    Box::new(v.pop().expect("step is a simple statement"))
                });
                out.push(Stmt::For { init, cond, step, body });
            }
            Stmt::Return(e) => out.push(Stmt::Return(e.map(|e| fold(e, env)))),
            Stmt::Expr(e) => out.push(Stmt::Expr(fold(e, env))),
        }
    }
}

fn literal_truth(e: &Expr) -> Option<bool> {
    match e.kind {
        ExprKind::IntLit(v) => Some(v != 0),
        ExprKind::FloatLit(v) => Some(v != 0.0),
        _ => None,
    }
}

fn convert_lit(k: Known, ty: &Ty) -> Known {
    match (k, ty) {
        (Known::Int(v), Ty::Float) => Known::Float(v as f64),
        (Known::Float(v), Ty::Int) => Known::Int(f2i(v)),
        (k, _) => k,
    }
}

fn lit(e: &Expr) -> Option<Known> {
    match e.kind {
        ExprKind::IntLit(v) => Some(Known::Int(v)),
        ExprKind::FloatLit(v) => Some(Known::Float(v)),
        _ => None,
    }
}

fn as_f(k: &Known) -> f64 {
    match k {
        Known::Int(v) => *v as f64,
        Known::Float(v) => *v,
        Known::Copy(_) => unreachable!(),
    }
}

fn as_i(k: &Known) -> i32 {
    match k {
        Known::Int(v) => *v,
        Known::Float(v) => f2i(*v),
        Known::Copy(_) => unreachable!(),
    }
}

fn truth(k: &Known) -> bool {
    match k {
        Known::Int(v) => *v != 0,
        Known::Float(v) => *v != 0.0,
        Known::Copy(_) => unreachable!(),
    }
}

fn to_expr(k: Known, ty: &Ty) -> Expr {
    match convert_lit(k, ty) {
        Known::Int(v) => Expr::int(v),
        Known::Float(v) => Expr::float(v),
        Known::Copy(_) => unreachable!(),
    }
}

/// Evaluates a binary operator over literals; `None` when the result is a trap.
fn fold_binary(op: BinOp, float: bool, a: &Known, b: &Known) -> Option<Known> {
    if op.is_logical() {
        let r = if op == BinOp::And { truth(a) && truth(b) } else { truth(a) || truth(b) };
        return Some(Known::Int(r as i32));
    }
    if float {
        let (x, y) = (as_f(a), as_f(b));
        return Some(match op {
            BinOp::Add => Known::Float(x + y),
            BinOp::Sub => Known::Float(x - y),
            BinOp::Mul => Known::Float(x * y),
            BinOp::Div => Known::Float(x / y),
            BinOp::Lt => Known::Int((x < y) as i32),
            BinOp::Le => Known::Int((x <= y) as i32),
            BinOp::Gt => Known::Int((x > y) as i32),
            BinOp::Ge => Known::Int((x >= y) as i32),
            BinOp::Eq => Known::Int((x == y) as i32),
            BinOp::Ne => Known::Int((x != y) as i32),
            _ => return None,
        });
    }
    let (x, y) = (as_i(a), as_i(b));
    Some(Known::Int(match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::Div | BinOp::Rem if y == 0 => return None,
        BinOp::Div => x.wrapping_div(y),
        BinOp::Rem => x.wrapping_rem(y),
        BinOp::Lt => (x < y) as i32,
        BinOp::Le => (x <= y) as i32,
        BinOp::Gt => (x > y) as i32,
        BinOp::Ge => (x >= y) as i32,
        BinOp::Eq => (x == y) as i32,
        BinOp::Ne => (x != y) as i32,
        BinOp::And | BinOp::Or => unreachable!(),
    }))
}

/// Substitutes known values and folds literal subtrees.
fn fold(e: Expr, env: &Env) -> Expr {
    let ty = e.ty.clone();
    match e.kind {
        ExprKind::Var(ref n) => match env.get(n) {
            Some(Known::Copy(y)) => Expr::new(ExprKind::Var(y.clone()), ty),
            Some(k) => to_expr(k.clone(), &ty),
            None => e,
        },
        ExprKind::Unary(op, inner) => {
            let inner = fold(*inner, env);
            match (op, lit(&inner)) {
                (UnOp::Neg, Some(Known::Int(v))) => Expr::int(v.wrapping_neg()),
                (UnOp::Neg, Some(Known::Float(v))) => Expr::float(-v),
                (UnOp::Not, Some(k)) => Expr::int(!truth(&k) as i32),
                _ => Expr::new(ExprKind::Unary(op, Box::new(inner)), ty),
            }
        }
        ExprKind::Binary(op, a, b) => {
            let float = a.ty == Ty::Float || b.ty == Ty::Float;
            let a = fold(*a, env);
            // short-circuit: a literal left operand decides whether the right runs
            if op.is_logical() {
                if let Some(k) = lit(&a) {
                    match (op, truth(&k)) {
                        (BinOp::And, false) => return Expr::int(0),
                        (BinOp::Or, true) => return Expr::int(1),
                        _ => {}
                    }
                }
            }
            let b = fold(*b, env);
            if let (Some(x), Some(y)) = (lit(&a), lit(&b)) {
                if let Some(r) = fold_binary(op, float, &x, &y) {
                    return to_expr(r, &ty);
                }
            }
            Expr::new(ExprKind::Binary(op, Box::new(a), Box::new(b)), ty)
        }
        ExprKind::Cast(t, inner) => {
            let inner = fold(*inner, env);
            match lit(&inner) {
                Some(k) if ty.is_numeric() => to_expr(k, &ty),
                _ => Expr::new(ExprKind::Cast(t, Box::new(inner)), ty),
            }
        }
        ExprKind::Index(b, i) => Expr::new(ExprKind::Index(Box::new(fold(*b, env)), Box::new(fold(*i, env))), ty),
        ExprKind::Deref(b) => Expr::new(ExprKind::Deref(Box::new(fold(*b, env))), ty),
        ExprKind::Call(n, args) => Expr::new(ExprKind::Call(n, args.into_iter().map(|a| fold(a, env)).collect()), ty),
        _ => e,
    }
}

// ---------------------------------------------------- dead-store elimination

fn uses(e: &Expr, out: &mut HashSet<String>) {
    e.walk(&mut |x| {
        if let ExprKind::Var(n) | ExprKind::AddrOf(n) = &x.kind {
            out.insert(n.clone());
        }
    });
}

fn stmt_uses(s: &Stmt, out: &mut HashSet<String>) {
    s.walk(&mut |s| {
        for e in s.exprs() {
            // a plain variable target is a write, not a read
            if let Stmt::Assign { target, .. } = s {
                if std::ptr::eq(e, target) && matches!(target.kind, ExprKind::Var(_)) {
                    continue;
                }
            }
            uses(e, out);
        }
    });
}

/// No traps, no calls, no allocation.
fn pure(e: &Expr) -> bool {
    let mut ok = true;
    e.walk(&mut |x| match &x.kind {
        ExprKind::Call(..) | ExprKind::Index(..) | ExprKind::Deref(_) | ExprKind::StrLit(_) => ok = false,
        ExprKind::Binary(BinOp::Div | BinOp::Rem, a, b) if a.ty != Ty::Float && b.ty != Ty::Float => ok = false,
        _ => {}
    });
    ok
}

/// Walks backwards with the set of variables live after the block; returns the
/// block without dead stores and leaves `live` as the set live before it.
fn dse_block(stmts: Vec<Stmt>, live: &mut HashSet<String>, taken: &HashSet<String>) -> Vec<Stmt> {
    let mut out = Vec::new();
    for s in stmts.into_iter().rev() {
        if let Some(s) = dse_stmt(s, live, taken) {
            out.push(s);
        }
    }
    out.reverse();
    out
}

fn removable(name: &str, ty: &Ty, live: &HashSet<String>, taken: &HashSet<String>) -> bool {
    ty.is_numeric() && !taken.contains(name) && !live.contains(name)
}

fn dse_stmt(s: Stmt, live: &mut HashSet<String>, taken: &HashSet<String>) -> Option<Stmt> {
    match s {
        Stmt::Decl { name, ty, init } => {
            if removable(&name, &ty, live, taken) && init.as_ref().is_none_or(pure) {
                return None;
            }
            live.remove(&name);
            if let Some(e) = &init {
                uses(e, live);
            }
            Some(Stmt::Decl { name, ty, init })
        }
        Stmt::Assign { target, value } => {
            if let ExprKind::Var(n) = &target.kind {
                if removable(n, &target.ty, live, taken) && pure(&value) {
                    return None;
                }
                live.remove(n);
            } else {
                uses(&target, live);
            }
            uses(&value, live);
            Some(Stmt::Assign { target, value })
        }
        Stmt::If { cond, then, els } => {
            let mut lt = live.clone();
            let then = dse_block(then, &mut lt, taken);
            let mut le = live.clone();
            let els = els.map(|e| dse_block(e, &mut le, taken));
            *live = &lt | &le;
            uses(&cond, live);
            Some(Stmt::If { cond, then, els })
        }
        Stmt::While { cond, body } => {
            let whole = Stmt::While { cond, body };
            stmt_uses(&whole, live);
            let Stmt::While { cond, body } = whole else { unreachable!() };
            let mut inner = live.clone();
            let body = dse_block(body, &mut inner, taken);
            Some(Stmt::While { cond, body })
        }
        Stmt::For { init, cond, step, body } => {
            let whole = Stmt::For { init: None, cond, step, body };
            stmt_uses(&whole, live);
            let Stmt::For { cond, step, body, .. } = whole else { unreachable!() };
            let loop_live = live.clone();
            let step = step.map(|s| {
                let mut l = loop_live.clone();
                // a step never becomes dead: the loop relies on it
                match dse_stmt(*s.clone(), &mut l, taken) {
                    Some(x) => Box::new(x),
                    None => s,
                }
            });
            let body = dse_block(body, &mut loop_live.clone(), taken);
            let init = init.map(|i| {
                let mut l = loop_live.clone();
                match dse_stmt(*i.clone(), &mut l, taken) {
                    Some(x) => Box::new(x),
                    None => i,
                }
            });
            if let Some(i) = &init {
                if let Stmt::Decl { name, .. } | Stmt::Assign { target: Expr { kind: ExprKind::Var(name), .. }, .. } = &**i {
                    live.remove(name);
                }
                stmt_uses(i, live);
            }
            Some(Stmt::For { init, cond, step, body })
        }
        Stmt::Return(e) => {
            live.clear();
            if let Some(e) = &e {
                uses(e, live);
            }
            Some(Stmt::Return(e))
        }
        Stmt::Expr(e) => {
            uses(&e, live);
            Some(Stmt::Expr(e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minic::{parse_function, pretty_print};

    fn opt(src: &str) -> String {
        pretty_print(&optimize(&parse_function(src).unwrap()))
    }

    #[test]
    fn folds_constants() {
        assert_eq!(opt("int f(){return 2+3;}"), "int f() {\n  return 5;\n}\n");
        assert_eq!(opt("int f(){int x=4; int y=x*2; return y-1;}"), "int f() {\n  return 7;\n}\n");
    }

    #[test]
    fn keeps_traps() {
        let out = opt("int f(){return 1/0;}");
        assert!(out.contains("1 / 0"), "{out}");
        let out = opt("int f(int *p){int x = p[3]; return 1;}");
        assert!(out.contains("p[3]"), "{out}");
    }

    #[test]
    fn unrolls_short_loops() {
        let out = opt("int f(int *p){int i; for(i=0;i<3;i=i+1){p[i]=i;} return i;}");
        assert!(!out.contains("for"), "{out}");
        assert!(out.contains("p[2] = 2;"), "{out}");
        assert!(out.ends_with("  return 3;\n}\n"), "{out}");
        let long = opt("int f(int *p){int i; for(i=0;i<5;i=i+1){p[i]=i;} return i;}");
        assert!(long.contains("for"), "{long}");
    }

    #[test]
    fn simplifies_branches() {
        let out = opt("int f(int a){if(1){a=a+1;}else{a=a-1;} while(0){a=2;} return a;}");
        assert_eq!(out, "int f(int a) {\n  a = a + 1;\n  return a;\n}\n");
    }

    #[test]
    fn loop_variables_are_not_propagated() {
        let out = opt("int f(int n){int s=0; while(n>0){s=s+n; n=n-1;} return s;}");
        assert!(out.contains("s = s + n"), "{out}");
    }

    #[test]
    fn removes_dead_stores() {
        let out = opt("int f(int a){int t=a*2; t=a+1; return t;}");
        assert_eq!(out, "int f(int a) {\n  int t = a + 1;\n  return t;\n}\n".replace("int t = a + 1", "t = a + 1"));
    }
}
