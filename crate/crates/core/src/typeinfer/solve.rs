//! Syntax-directed constraint generation and a unification solver with
//! deferred numeric-conversion constraints.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::minic::{BinOp, Ty, UnOp};

use super::parse::{AmbiguousAst, Lattice, PExpr, PStmt, PTy};
use super::TypeInferError;

/// A type term; `Var` indexes into `ConstraintSet::origins`.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Int,
    Float,
    Void,
    Ptr(Box<Term>),
    Func(Vec<Term>, Box<Term>),
    Var(usize),
}

impl Term {
    fn ptr(t: Term) -> Term {
        Term::Ptr(Box::new(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Eq(Term, Term),
    /// A value of the right type flows into a slot of the left type: numeric
    /// types convert into each other, anything else must be equal.
    Conv(Term, Term),
    Numeric(Term),
    /// `result = lhs op rhs` for `+ - * /`: double if either side is.
    Join(Term, Term, Term),
    /// An identifier read as a value that is declared nowhere.
    Unbound(String),
}

/// Constraints of one reading, with the choices nested inside it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Branch {
    pub constraints: Vec<Constraint>,
    pub choices: Vec<Choice>,
}

/// An unresolved ambiguity: the value reading is preferred when both solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub name: String,
    pub value: Option<Branch>,
    pub cast: Option<Branch>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarOrigin {
    /// An undeclared type name.
    Type(String),
    /// An undeclared function.
    Function(String),
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub root: Branch,
    pub origins: Vec<VarOrigin>,
}

impl ConstraintSet {
    pub fn render(&self, t: &Term) -> String {
        match t {
            Term::Int => "int".into(),
            Term::Float => "double".into(),
            Term::Void => "void".into(),
            Term::Ptr(t) => format!("{}*", self.render(t)),
            Term::Func(ps, r) => {
                let ps: Vec<String> = ps.iter().map(|p| self.render(p)).collect();
                format!("{}({})", self.render(r), ps.join(", "))
            }
            Term::Var(v) => match &self.origins[*v] {
                VarOrigin::Type(n) | VarOrigin::Function(n) => n.clone(),
                VarOrigin::Fresh => format!("'t{v}"),
            },
        }
    }

    /// The variable standing for an undeclared type or function name.
    pub fn var_of(&self, name: &str) -> Option<usize> {
        self.origins.iter().position(|o| matches!(o, VarOrigin::Type(n) | VarOrigin::Function(n) if n == name))
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

struct Gen<'a> {
    origins: Vec<VarOrigin>,
    names: HashMap<String, usize>,
    typedefs: HashMap<&'a str, &'a PTy>,
    externs: HashMap<&'a str, (Vec<&'a PTy>, &'a PTy)>,
    fn_name: &'a str,
    scopes: Vec<HashMap<String, Term>>,
    ret: Term,
    out: Vec<Branch>,
}

impl<'a> Gen<'a> {
    fn fresh(&mut self) -> Term {
        self.origins.push(VarOrigin::Fresh);
        Term::Var(self.origins.len() - 1)
    }

    fn named_var(&mut self, name: &str, origin: VarOrigin) -> Term {
        if let Some(&v) = self.names.get(name) {
            return Term::Var(v);
        }
        self.origins.push(origin);
        let v = self.origins.len() - 1;
        self.names.insert(name.to_string(), v);
        Term::Var(v)
    }

    fn push(&mut self, c: Constraint) {
        self.out.last_mut().expect("branch").constraints.push(c);
    }

    fn ty(&mut self, t: &PTy) -> Term {
        match t {
            PTy::Int => Term::Int,
            PTy::Float => Term::Float,
            PTy::Void => Term::Void,
            PTy::Ptr(e) => {
                let e = self.ty(e);
                self.push(Constraint::Numeric(e.clone()));
                Term::ptr(e)
            }
            PTy::Named(n) => match self.typedefs.get(n.as_str()) {
                Some(def) => self.ty(def),
                None => self.named_var(n, VarOrigin::Type(n.clone())),
            },
        }
    }

    fn lookup(&self, name: &str) -> Option<Term> {
        self.scopes.iter().rev().find_map(|s| s.get(name).cloned())
    }

    fn declare(&mut self, name: &str, t: Term) {
        self.scopes.last_mut().expect("scope").insert(name.to_string(), t);
    }

    fn expr(&mut self, e: &PExpr) -> Term {
        use Constraint::*;
        match e {
            PExpr::Int(_) => Term::Int,
            PExpr::Float(_) => Term::Float,
            PExpr::Str(_) => Term::ptr(Term::Int),
            PExpr::Var(n) => match self.lookup(n) {
                Some(t) => t,
                None => {
                    self.push(Unbound(n.clone()));
                    self.fresh()
                }
            },
            PExpr::Unary(UnOp::Neg, a) => {
                let t = self.expr(a);
                self.push(Numeric(t.clone()));
                t
            }
            PExpr::Unary(UnOp::Not, a) => {
                let t = self.expr(a);
                self.push(Numeric(t));
                Term::Int
            }
            PExpr::Binary(op, a, b) => {
                let (ta, tb) = (self.expr(a), self.expr(b));
                if op.is_comparison() || op.is_logical() {
                    self.push(Numeric(ta));
                    self.push(Numeric(tb));
                    Term::Int
                } else if *op == BinOp::Rem {
                    self.push(Eq(ta, Term::Int));
                    self.push(Eq(tb, Term::Int));
                    Term::Int
                } else {
                    let r = self.fresh();
                    self.push(Join(r.clone(), ta, tb));
                    r
                }
            }
            PExpr::Index(a, i) => {
                let (ta, ti) = (self.expr(a), self.expr(i));
                let elem = self.fresh();
                self.push(Eq(ta, Term::ptr(elem.clone())));
                self.push(Eq(ti, Term::Int));
                self.push(Numeric(elem.clone()));
                elem
            }
            PExpr::Deref(a) => {
                let ta = self.expr(a);
                let elem = self.fresh();
                self.push(Eq(ta, Term::ptr(elem.clone())));
                self.push(Numeric(elem.clone()));
                elem
            }
            PExpr::AddrOf(n) => {
                let t = match self.lookup(n) {
                    Some(t) => t,
                    None => {
                        self.push(Unbound(n.clone()));
                        self.fresh()
                    }
                };
                self.push(Numeric(t.clone()));
                Term::ptr(t)
            }
            PExpr::Cast(t, a) => {
                let ta = self.expr(a);
                let t = self.ty(t);
                // a cast to a number says nothing about the operand's own type
                match t {
                    Term::Int | Term::Float => self.push(Numeric(ta)),
                    _ => self.push(Conv(t.clone(), ta)),
                }
                t
            }
            PExpr::Call(name, args) => {
                let targs: Vec<Term> = args.iter().map(|a| self.expr(a)).collect();
                if let Some((params, ret)) = self.externs.get(name.as_str()).cloned() {
                    if params.len() != targs.len() {
                        // arity mismatch: a function type that cannot unify
                        let r = self.fresh();
                        self.push(Eq(Term::Func(params.iter().map(|_| Term::Int).collect(), Box::new(r.clone())), Term::Func(targs, Box::new(r))));
                    } else {
                        for (p, a) in params.into_iter().zip(targs) {
                            let p = self.ty(p);
                            self.push(Conv(p, a));
                        }
                    }
                    return self.ty(ret);
                }
                if name == self.fn_name {
                    return self.fresh();
                }
                let f = self.named_var(name, VarOrigin::Function(name.clone()));
                let r = self.fresh();
                self.push(Eq(f, Term::Func(targs, Box::new(r.clone()))));
                r
            }
            PExpr::Ambig { name, lattice, value, cast } => {
                let pick = match lattice {
                    Lattice::MustBeType => cast.as_deref().or(value.as_deref()),
                    Lattice::MustBeValue => value.as_deref().or(cast.as_deref()),
                    Lattice::Unknown => None,
                };
                if let Some(r) = pick {
                    return self.expr(r);
                }
                let result = self.fresh();
                let reading = |g: &mut Self, r: &Option<Box<PExpr>>| {
                    r.as_deref().map(|r| {
                        g.out.push(Branch::default());
                        let t = g.expr(r);
                        g.push(Eq(result.clone(), t));
                        g.out.pop().expect("branch")
                    })
                };
                let value = reading(self, value);
                let cast = reading(self, cast);
                self.out.last_mut().expect("branch").choices.push(Choice { name: name.clone(), value, cast });
                result
            }
        }
    }

    fn stmts(&mut self, ss: &[PStmt]) {
        self.scopes.push(HashMap::new());
        for s in ss {
            self.stmt(s);
        }
        self.scopes.pop();
    }

    fn stmt(&mut self, s: &PStmt) {
        use Constraint::*;
        match s {
            PStmt::Decl { name, ty, init } => {
                let t = self.ty(ty);
                if let Some(e) = init {
                    let te = self.expr(e);
                    self.push(Conv(t.clone(), te));
                }
                self.declare(name, t);
            }
            PStmt::Assign { target, value } => {
                let (tt, tv) = (self.expr(target), self.expr(value));
                self.push(Conv(tt, tv));
            }
            PStmt::If { cond, then, els } => {
                let c = self.expr(cond);
                self.push(Numeric(c));
                self.stmts(then);
                if let Some(e) = els {
                    self.stmts(e);
                }
            }
            PStmt::While { cond, body } => {
                let c = self.expr(cond);
                self.push(Numeric(c));
                self.stmts(body);
            }
            PStmt::For { init, cond, step, body } => {
                self.scopes.push(HashMap::new());
                if let Some(i) = init {
                    self.stmt(i);
                }
                if let Some(c) = cond {
                    let c = self.expr(c);
                    self.push(Numeric(c));
                }
                if let Some(st) = step {
                    self.stmt(st);
                }
                self.stmts(body);
                self.scopes.pop();
            }
            PStmt::Return(None) => {
                let r = self.ret.clone();
                self.push(Eq(r, Term::Void));
            }
            PStmt::Return(Some(e)) => {
                let t = self.expr(e);
                let r = self.ret.clone();
                self.push(Conv(r, t));
            }
            PStmt::Expr(e) => {
                self.expr(e);
            }
        }
    }
}

/// Generates typing constraints for every construct in the program.
pub fn generate_constraints(a: &AmbiguousAst) -> ConstraintSet {
    let mut g = Gen {
        origins: Vec::new(),
        names: HashMap::new(),
        typedefs: a.typedefs.iter().map(|(n, t)| (n.as_str(), t)).collect(),
        externs: a.externs.iter().map(|e| (e.name.as_str(), (e.params.iter().collect(), &e.ret))).collect(),
        fn_name: &a.name,
        scopes: vec![HashMap::new()],
        ret: Term::Void,
        out: vec![Branch::default()],
    };
    g.ret = g.ty(&a.ret);
    for (n, t) in &a.params {
        let t = g.ty(t);
        g.declare(n, t);
    }
    g.stmts(&a.body);
    ConstraintSet { root: g.out.pop().expect("root"), origins: g.origins }
}

/// Ground types for every variable, plus the resolved undeclared names.
#[derive(Debug, Clone, PartialEq)]
pub struct Substitution {
    pub vars: Vec<Ty>,
    pub types: BTreeMap<String, Ty>,
    pub functions: BTreeMap<String, Ty>,
}

enum Step {
    Done,
    /// Some variable was bound but the constraint is not yet discharged.
    Narrowed,
    Wait,
}

struct Solver<'a> {
    cs: &'a ConstraintSet,
    bind: Vec<Option<Term>>,
}

impl Solver<'_> {
    fn walk(&self, t: &Term) -> Term {
        let mut t = t.clone();
        while let Term::Var(v) = t {
            match &self.bind[v] {
                Some(b) => t = b.clone(),
                None => break,
            }
        }
        t
    }

    fn zonk(&self, t: &Term) -> Term {
        match self.walk(t) {
            Term::Ptr(e) => Term::ptr(self.zonk(&e)),
            Term::Func(ps, r) => Term::Func(ps.iter().map(|p| self.zonk(p)).collect(), Box::new(self.zonk(&r))),
            t => t,
        }
    }

    fn occurs(&self, v: usize, t: &Term) -> bool {
        match self.walk(t) {
            Term::Var(w) => v == w,
            Term::Ptr(e) => self.occurs(v, &e),
            Term::Func(ps, r) => ps.iter().any(|p| self.occurs(v, p)) || self.occurs(v, &r),
            _ => false,
        }
    }

    fn conflict(&self, a: &Term, b: &Term) -> TypeInferError {
        TypeInferError::TypeConflict(self.cs.render(&self.zonk(a)), self.cs.render(&self.zonk(b)))
    }

    fn unify(&mut self, a: &Term, b: &Term) -> Result<(), TypeInferError> {
        let (wa, wb) = (self.walk(a), self.walk(b));
        match (&wa, &wb) {
            (Term::Var(x), Term::Var(y)) if x == y => Ok(()),
            (Term::Var(v), t) | (t, Term::Var(v)) => {
                if self.occurs(*v, t) {
                    return Err(TypeInferError::OccursCheck(
                        self.cs.render(&Term::Var(*v)),
                        self.cs.render(&self.zonk(t)),
                    ));
                }
                self.bind[*v] = Some(t.clone());
                Ok(())
            }
            (Term::Int, Term::Int) | (Term::Float, Term::Float) | (Term::Void, Term::Void) => Ok(()),
            (Term::Ptr(x), Term::Ptr(y)) => self.unify(x, y),
            (Term::Func(px, rx), Term::Func(py, ry)) if px.len() == py.len() => {
                for (x, y) in px.iter().zip(py) {
                    self.unify(x, y)?;
                }
                self.unify(rx, ry)
            }
            _ => Err(self.conflict(&wa, &wb)),
        }
    }

    fn numeric(&self, t: &Term) -> Result<Option<Term>, TypeInferError> {
        match self.walk(t) {
            Term::Int => Ok(Some(Term::Int)),
            Term::Float => Ok(Some(Term::Float)),
            Term::Var(_) => Ok(None),
            other => Err(TypeInferError::TypeConflict(self.cs.render(&self.zonk(&other)), "a number".into())),
        }
    }

    fn step(&mut self, c: &Constraint) -> Result<Step, TypeInferError> {
        match c {
            Constraint::Eq(a, b) => self.unify(a, b).map(|_| Step::Done),
            Constraint::Unbound(n) => Err(TypeInferError::Undeclared(n.clone())),
            Constraint::Numeric(t) => Ok(if self.numeric(t)?.is_some() { Step::Done } else { Step::Wait }),
            Constraint::Conv(a, b) => {
                let (wa, wb) = (self.walk(a), self.walk(b));
                match (&wa, &wb) {
                    (Term::Void | Term::Func(..), _) | (_, Term::Void | Term::Func(..)) => Err(self.conflict(&wa, &wb)),
                    (Term::Ptr(_), _) | (_, Term::Ptr(_)) => self.unify(&wa, &wb).map(|_| Step::Done),
                    (Term::Var(_), _) | (_, Term::Var(_)) => Ok(Step::Wait),
                    _ => Ok(Step::Done),
                }
            }
            Constraint::Join(r, a, b) => {
                let (nr, na, nb) = (self.numeric(r)?, self.numeric(a)?, self.numeric(b)?);
                match (nr, na, nb) {
                    (_, Some(x), Some(y)) => {
                        let j = if x == Term::Float || y == Term::Float { Term::Float } else { Term::Int };
                        self.unify(r, &j).map(|_| Step::Done)
                    }
                    (Some(Term::Int), _, _) => {
                        self.unify(a, &Term::Int)?;
                        self.unify(b, &Term::Int).map(|_| Step::Done)
                    }
                    (Some(Term::Float), Some(Term::Int), None) => self.unify(b, &Term::Float).map(|_| Step::Done),
                    (Some(Term::Float), None, Some(Term::Int)) => self.unify(a, &Term::Float).map(|_| Step::Done),
                    // a double operand makes the result double whatever the other one is
                    (None, Some(Term::Float), None) | (None, None, Some(Term::Float)) => {
                        self.unify(r, &Term::Float).map(|_| Step::Narrowed)
                    }
                    _ => Ok(Step::Wait),
                }
            }
        }
    }

    /// Preferred bindings for variables a waiting constraint leaves open:
    /// the same type as the other side.
    fn hints(&self, c: &Constraint, out: &mut Vec<(usize, Term)>) {
        let var = |t: &Term| match self.walk(t) {
            Term::Var(v) => Some(v),
            _ => None,
        };
        let ground = |t: &Term| match self.walk(t) {
            Term::Var(_) => None,
            g => Some(g),
        };
        match c {
            Constraint::Conv(a, b) => {
                if let (Some(v), Some(g)) = (var(a), ground(b)) {
                    out.push((v, g));
                }
                if let (Some(v), Some(g)) = (var(b), ground(a)) {
                    out.push((v, g));
                }
            }
            Constraint::Join(r, a, b) => {
                if let (Some(v), Some(g)) = (var(a), ground(b)) {
                    out.push((v, g));
                }
                if let (Some(v), Some(g)) = (var(b), ground(a)) {
                    out.push((v, g));
                }
                if ground(r) == Some(Term::Float) {
                    for v in [var(a), var(b)].into_iter().flatten() {
                        out.push((v, Term::Float));
                    }
                }
            }
            _ => {}
        }
    }

    fn free_vars(&self, t: &Term, out: &mut Vec<usize>) {
        match self.walk(t) {
            Term::Var(v) => out.push(v),
            Term::Ptr(e) => self.free_vars(&e, out),
            Term::Func(ps, r) => {
                ps.iter().for_each(|p| self.free_vars(p, out));
                self.free_vars(&r, out);
            }
            _ => {}
        }
    }

    fn run(&mut self, cs: &[Constraint]) -> Result<(), TypeInferError> {
        let mut pending: Vec<Constraint> = Vec::new();
        for c in cs {
            if let Step::Wait | Step::Narrowed = self.step(c)? {
                pending.push(c.clone());
            }
        }
        loop {
            let mut progress = true;
            while progress {
                progress = false;
                let mut keep = Vec::new();
                for c in pending.drain(..) {
                    match self.step(&c)? {
                        Step::Done => progress = true,
                        Step::Narrowed => {
                            progress = true;
                            keep.push(c);
                        }
                        Step::Wait => keep.push(c),
                    }
                }
                pending = keep;
            }
            if pending.is_empty() {
                return Ok(());
            }
            let mut hints = Vec::new();
            for c in &pending {
                self.hints(c, &mut hints);
            }
            // a join result follows from its operands; hinting it directly
            // can contradict them
            let results: Vec<usize> = pending
                .iter()
                .filter_map(|c| match c {
                    Constraint::Join(r, ..) => match self.walk(r) {
                        Term::Var(v) => Some(v),
                        _ => None,
                    },
                    _ => None,
                })
                .collect();
            if hints.iter().any(|(v, _)| !results.contains(v)) {
                hints.retain(|(v, _)| !results.contains(v));
            }
            if !hints.is_empty() {
                // merge per variable so the result does not depend on order
                let mut merged: BTreeMap<usize, Term> = BTreeMap::new();
                for (v, g) in hints {
                    let e = merged.entry(v).or_insert(g.clone());
                    if g == Term::Float {
                        *e = Term::Float;
                    }
                }
                for (v, g) in merged {
                    self.unify(&Term::Var(v), &g)?;
                }
                continue;
            }
            // nothing grounds what is left: default to int
            let mut vs = Vec::new();
            for c in &pending {
                match c {
                    Constraint::Numeric(t) | Constraint::Conv(t, _) => self.free_vars(t, &mut vs),
                    Constraint::Join(r, a, b) => {
                        for t in [r, a, b] {
                            self.free_vars(t, &mut vs);
                        }
                    }
                    _ => {}
                }
                if let Constraint::Conv(_, t) = c {
                    self.free_vars(t, &mut vs);
                }
            }
            for v in vs {
                self.unify(&Term::Var(v), &Term::Int)?;
            }
        }
    }
}

fn to_ty(t: &Term) -> Ty {
    match t {
        Term::Int | Term::Var(_) => Ty::Int,
        Term::Float => Ty::Float,
        Term::Void => Ty::Void,
        Term::Ptr(e) => Ty::ptr(to_ty(e)),
        Term::Func(ps, r) => Ty::Func(ps.iter().map(to_ty).collect(), Box::new(to_ty(r))),
    }
}

fn flatten(b: &Branch, out: &mut Vec<Constraint>) {
    out.extend(b.constraints.iter().cloned());
}

fn attempt<'a>(cs: &'a ConstraintSet, constraints: &[Constraint]) -> Result<Solver<'a>, TypeInferError> {
    let mut s = Solver { cs, bind: vec![None; cs.origins.len()] };
    s.run(constraints)?;
    Ok(s)
}

/// Commits to a reading for each choice in order, preferring the value
/// reading when both solve.
fn select(cs: &ConstraintSet, mut base: Vec<Constraint>, choices: &[Choice]) -> Result<Vec<Constraint>, TypeInferError> {
    for ch in choices {
        let mut last = Err(TypeInferError::Undeclared(ch.name.clone()));
        for b in [&ch.value, &ch.cast].into_iter().flatten() {
            let mut cand = base.clone();
            flatten(b, &mut cand);
            let r = select(cs, cand, &b.choices).and_then(|c| attempt(cs, &c).map(|_| c));
            let ok = r.is_ok();
            last = r;
            if ok {
                break;
            }
        }
        base = last?;
    }
    Ok(base)
}

/// Unifies the constraint set, resolves ambiguities and defaults whatever
/// remains unconstrained to int.
pub fn solve(cs: &ConstraintSet) -> Result<Substitution, TypeInferError> {
    let chosen = select(cs, cs.root.constraints.clone(), &cs.root.choices)?;
    let s = attempt(cs, &chosen)?;
    let vars: Vec<Ty> = (0..cs.origins.len()).map(|v| to_ty(&s.zonk(&Term::Var(v)))).collect();
    let mut types = BTreeMap::new();
    let mut functions = BTreeMap::new();
    for (v, o) in cs.origins.iter().enumerate() {
        match o {
            VarOrigin::Type(n) => {
                types.insert(n.clone(), vars[v].clone());
            }
            VarOrigin::Function(n) => {
                functions.insert(n.clone(), vars[v].clone());
            }
            VarOrigin::Fresh => {}
        }
    }
    Ok(Substitution { vars, types, functions })
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_partial;
    use super::*;

    fn set(origins: usize, cs: Vec<Constraint>) -> ConstraintSet {
        ConstraintSet { root: Branch { constraints: cs, choices: vec![] }, origins: vec![VarOrigin::Fresh; origins] }
    }

    fn v(i: usize) -> Term {
        Term::Var(i)
    }

    #[test]
    fn single_equation() {
        let s = solve(&set(1, vec![Constraint::Eq(v(0), Term::Int)])).unwrap();
        assert_eq!(s.vars, vec![Ty::Int]);
    }

    #[test]
    fn two_step_unification() {
        let s = solve(&set(2, vec![Constraint::Eq(v(0), Term::ptr(v(1))), Constraint::Eq(v(1), Term::Float)])).unwrap();
        assert_eq!(s.vars[0], Ty::ptr(Ty::Float));
    }

    #[test]
    fn occurs_check() {
        let e = solve(&set(1, vec![Constraint::Eq(v(0), Term::ptr(v(0)))])).unwrap_err();
        assert!(matches!(e, TypeInferError::OccursCheck(..)), "{e}");
    }

    #[test]
    fn conflict() {
        let e = solve(&set(1, vec![Constraint::Eq(Term::Int, Term::ptr(v(0)))])).unwrap_err();
        assert!(matches!(e, TypeInferError::TypeConflict(..)), "{e}");
    }

    #[test]
    fn congruence_through_pointers() {
        let cs = vec![Constraint::Eq(Term::ptr(v(0)), Term::ptr(v(1))), Constraint::Eq(v(1), Term::Float)];
        assert_eq!(solve(&set(2, cs)).unwrap().vars[0], Ty::Float);
    }

    #[test]
    fn defaulting_comes_last() {
        // v0 is only grounded through a conversion hint, v1 not at all
        let cs = vec![Constraint::Numeric(v(1)), Constraint::Conv(v(0), v(2)), Constraint::Eq(v(2), Term::Float)];
        let s = solve(&set(3, cs)).unwrap();
        assert_eq!(s.vars[..2], [Ty::Float, Ty::Int]);
    }

    #[test]
    fn order_independent() {
        let cs = vec![
            Constraint::Join(v(0), v(1), v(2)),
            Constraint::Conv(v(1), Term::Int),
            Constraint::Conv(v(2), Term::Float),
            Constraint::Eq(v(3), Term::ptr(v(2))),
            Constraint::Numeric(v(4)),
        ];
        let a = solve(&set(5, cs.clone())).unwrap();
        let mut rev = cs;
        rev.reverse();
        assert_eq!(solve(&set(5, rev)).unwrap(), a);
    }

    #[test]
    fn double_operand_fixes_the_join() {
        // v0 = join(v1, double); v2 = join(v0, int); v1 <- v2
        let cs = vec![
            Constraint::Join(v(0), v(1), Term::Float),
            Constraint::Join(v(2), v(0), Term::Int),
            Constraint::Conv(v(1), v(2)),
        ];
        let s = solve(&set(3, cs)).unwrap();
        assert_eq!(s.vars[..3], [Ty::Float, Ty::Float, Ty::Float]);
        let a = parse_partial("real f(real *q, int k){ q[0] = q[0] * 0.5 + k; return q[1]; }").unwrap();
        assert_eq!(solve(&generate_constraints(&a)).unwrap().types["real"], Ty::Float);
    }

    #[test]
    fn assignment_rule() {
        let a = parse_partial("int f(){ mytype x = 0; return 0; }").unwrap();
        let cs = generate_constraints(&a);
        let m = cs.var_of("mytype").unwrap();
        assert!(cs.root.constraints.contains(&Constraint::Conv(v(m), Term::Int)));
        assert_eq!(solve(&cs).unwrap().types["mytype"], Ty::Int);
    }

    #[test]
    fn index_assignment_rule() {
        let a = parse_partial("int f(t p){ p[0] = 1; return 0; }").unwrap();
        let s = solve(&generate_constraints(&a)).unwrap();
        assert_eq!(s.types["t"], Ty::ptr(Ty::Int));
    }

    #[test]
    fn call_rule() {
        let a = parse_partial("int f(double x){ g(x); return 0; }").unwrap();
        let cs = generate_constraints(&a);
        let g = cs.var_of("g").unwrap();
        assert!(cs.root.constraints.iter().any(|c| matches!(c,
            Constraint::Eq(Term::Var(x), Term::Func(ps, _)) if *x == g && ps == &vec![Term::Float])));
        assert_eq!(solve(&cs).unwrap().functions["g"], Ty::Func(vec![Ty::Float], Box::new(Ty::Int)));
    }

    #[test]
    fn ambiguity_resolves_to_cast_when_value_is_unbound() {
        let a = parse_partial("int f(int *b){ return (a)*b; }").unwrap();
        let cs = generate_constraints(&a);
        assert_eq!(cs.root.choices.len(), 1);
        assert_eq!(solve(&cs).unwrap().types["a"], Ty::Int);
    }
}
