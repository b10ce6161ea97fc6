//! Big-step reference interpreter. Every executed statement and every
//! evaluated expression node costs one step.

use std::collections::HashMap;

use super::ast::*;
use super::ty::Ty;
use crate::exec::{f2i, wrap_i32, Inputs, Outcome, Scalar, TrapReason};

#[derive(Debug, Clone, Copy, PartialEq)]
enum V {
    I(i32),
    F(f64),
    /// Segment index; `None` is the null pointer.
    P(Option<usize>),
}

impl V {
    fn truthy(self) -> bool {
        match self {
            V::I(v) => v != 0,
            V::F(v) => v != 0.0,
            V::P(p) => p.is_some(),
        }
    }

    fn as_f(self) -> f64 {
        match self {
            V::I(v) => v as f64,
            V::F(v) => v,
            V::P(_) => f64::NAN,
        }
    }

    fn as_i(self) -> i32 {
        match self {
            V::I(v) => v,
            V::F(v) => f2i(v),
            V::P(_) => 0,
        }
    }

    /// Converts to the representation of `ty` (numeric conversions only).
    fn convert(self, ty: &Ty) -> V {
        match (ty, self) {
            (Ty::Int, v) => V::I(v.as_i()),
            (Ty::Float, v) => V::F(v.as_f()),
            (_, v) => v,
        }
    }

    fn to_scalar(self) -> Scalar {
        match self {
            V::I(v) => Scalar::Int(v as i64),
            V::F(v) => Scalar::Float(v),
            V::P(_) => Scalar::Int(0),
        }
    }
}

enum Stop {
    Trap(TrapReason),
    StepLimit,
}

enum Flow {
    Normal,
    Return(Option<V>),
}

enum Home {
    Val(V),
    /// Address-taken variable living in a one-cell segment.
    Seg(usize),
}

struct Machine {
    steps: u64,
    limit: u64,
    segments: Vec<Vec<V>>,
    n_buffers: usize,
    vars: HashMap<String, Home>,
    ret: Ty,
}

type R<T> = Result<T, Stop>;

/// Runs `ast` on `inputs`. Inputs that do not fit the signature trap with
/// `InvalidOp` before any step is taken.
pub fn interpret(ast: &Ast, inputs: &Inputs, step_limit: u64) -> Outcome {
    let sig = ast.signature();
    let initial: Vec<Vec<Scalar>> = inputs.buffers.clone();
    if !inputs.fits(&sig) {
        return Outcome::trap(TrapReason::InvalidOp, initial);
    }
    let mut m = Machine {
        steps: 0,
        limit: step_limit,
        segments: Vec::new(),
        n_buffers: inputs.buffers.len(),
        vars: HashMap::new(),
        ret: sig.ret.clone(),
    };
    for buf in &inputs.buffers {
        m.segments.push(
            buf.iter()
                .map(|s| match *s {
                    Scalar::Int(v) => V::I(wrap_i32(v)),
                    Scalar::Float(v) => V::F(v),
                })
                .collect(),
        );
    }
    let (mut si, mut bi) = (0, 0);
    for p in &ast.params {
        let v = if p.ty.is_ptr() {
            bi += 1;
            V::P(Some(bi - 1))
        } else {
            si += 1;
            match inputs.scalars[si - 1] {
                Scalar::Int(v) => V::I(wrap_i32(v)),
                Scalar::Float(v) => V::F(v),
            }
        };
        m.vars.insert(p.name.clone(), Home::Val(v));
    }
    for name in ast.address_taken() {
        let init = match m.vars.remove(&name) {
            Some(Home::Val(v)) => v,
            _ => V::I(0),
        };
        m.segments.push(vec![init]);
        let seg = m.segments.len() - 1;
        m.vars.insert(name, Home::Seg(seg));
    }
    let result = m.block(&ast.body);
    let buffers = m.final_buffers();
    match result {
        Ok(Flow::Return(v)) => Outcome::returned(v.map(V::to_scalar), buffers),
        Ok(Flow::Normal) if sig.ret.is_void() => Outcome::returned(None, buffers),
        Ok(Flow::Normal) => Outcome::trap(TrapReason::InvalidOp, buffers),
        Err(Stop::Trap(r)) => Outcome::trap(r, buffers),
        Err(Stop::StepLimit) => Outcome::step_limit(),
    }
}

impl Machine {
    fn tick(&mut self) -> R<()> {
        self.steps += 1;
        if self.steps > self.limit {
            Err(Stop::StepLimit)
        } else {
            Ok(())
        }
    }

    fn final_buffers(&self) -> Vec<Vec<Scalar>> {
        self.segments[..self.n_buffers]
            .iter()
            .map(|s| s.iter().map(|v| v.to_scalar()).collect())
            .collect()
    }

    fn block(&mut self, stmts: &[Stmt]) -> R<Flow> {
        for s in stmts {
            if let Flow::Return(v) = self.stmt(s)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn read_var(&self, name: &str) -> V {
        match self.vars.get(name) {
            Some(Home::Val(v)) => *v,
            Some(Home::Seg(s)) => self.segments[*s][0],
            None => V::I(0),
        }
    }

    fn write_var(&mut self, name: &str, v: V) {
        match self.vars.get_mut(name) {
            Some(Home::Seg(s)) => {
                let s = *s;
                self.segments[s][0] = v;
            }
            Some(Home::Val(slot)) => *slot = v,
            None => {
                self.vars.insert(name.to_string(), Home::Val(v));
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) -> R<Flow> {
        self.tick()?;
        match s {
            Stmt::Decl { name, ty, init } => {
                let rty = ty.resolve();
                let v = match init {
                    Some(e) => self.eval(e)?.convert(&rty),
                    None => match rty {
                        Ty::Float => V::F(0.0),
                        Ty::Ptr(_) => V::P(None),
                        _ => V::I(0),
                    },
                };
                self.write_var(name, v);
            }
            Stmt::Assign { target, value } => self.assign(target, value)?,
            Stmt::If { cond, then, els } => {
                if self.eval(cond)?.truthy() {
                    return self.block(then);
                } else if let Some(e) = els {
                    return self.block(e);
                }
            }
            Stmt::While { cond, body } => loop {
                if !self.eval(cond)?.truthy() {
                    break;
                }
                if let Flow::Return(v) = self.block(body)? {
                    return Ok(Flow::Return(v));
                }
                self.tick()?;
            },
            Stmt::For { init, cond, step, body } => {
                if let Some(i) = init {
                    self.stmt(i)?;
                }
                loop {
                    if let Some(c) = cond {
                        if !self.eval(c)?.truthy() {
                            break;
                        }
                    } else {
                        self.tick()?;
                    }
                    if let Flow::Return(v) = self.block(body)? {
                        return Ok(Flow::Return(v));
                    }
                    if let Some(st) = step {
                        self.stmt(st)?;
                    }
                }
            }
            Stmt::Return(e) => {
                let v = match e {
                    Some(e) => Some(self.eval(e)?.convert(&self.ret.clone())),
                    None => None,
                };
                return Ok(Flow::Return(v));
            }
            Stmt::Expr(e) => {
                self.eval(e)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn assign(&mut self, target: &Expr, value: &Expr) -> R<()> {
        match &target.kind {
            ExprKind::Var(name) => {
                let v = self.eval(value)?.convert(&target.ty);
                self.write_var(name, v);
            }
            ExprKind::Index(base, idx) => {
                self.tick()?;
                let b = self.eval(base)?;
                let i = self.eval(idx)?.as_i();
                let v = self.eval(value)?.convert(&target.ty);
                *self.cell(b, i)? = v;
            }
            ExprKind::Deref(base) => {
                self.tick()?;
                let b = self.eval(base)?;
                let v = self.eval(value)?.convert(&target.ty);
                *self.cell(b, 0)? = v;
            }
            _ => return Err(Stop::Trap(TrapReason::InvalidOp)),
        }
        Ok(())
    }

    fn cell(&mut self, base: V, idx: i32) -> R<&mut V> {
        let V::P(Some(seg)) = base else {
            return Err(Stop::Trap(TrapReason::OutOfBounds));
        };
        let seg = &mut self.segments[seg];
        if idx < 0 || idx as usize >= seg.len() {
            return Err(Stop::Trap(TrapReason::OutOfBounds));
        }
        Ok(&mut seg[idx as usize])
    }

    fn eval(&mut self, e: &Expr) -> R<V> {
        self.tick()?;
        Ok(match &e.kind {
            ExprKind::IntLit(v) => V::I(*v),
            ExprKind::FloatLit(v) => V::F(*v),
            ExprKind::StrLit(s) => {
                let mut cells: Vec<V> = s.bytes().map(|b| V::I(b as i32)).collect();
                cells.push(V::I(0));
                self.segments.push(cells);
                V::P(Some(self.segments.len() - 1))
            }
            ExprKind::Var(n) => self.read_var(n),
            ExprKind::Unary(UnOp::Neg, a) => match self.eval(a)? {
                V::I(v) => V::I(v.wrapping_neg()),
                V::F(v) => V::F(-v),
                p => p,
            },
            ExprKind::Unary(UnOp::Not, a) => V::I(!self.eval(a)?.truthy() as i32),
            ExprKind::Binary(BinOp::And, a, b) => {
                let r = self.eval(a)?.truthy() && self.eval(b)?.truthy();
                V::I(r as i32)
            }
            ExprKind::Binary(BinOp::Or, a, b) => {
                let r = self.eval(a)?.truthy() || self.eval(b)?.truthy();
                V::I(r as i32)
            }
            ExprKind::Binary(op, a, b) => {
                let float = a.ty == Ty::Float || b.ty == Ty::Float;
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                binop(*op, float, x, y)?
            }
            ExprKind::Index(base, idx) => {
                let b = self.eval(base)?;
                let i = self.eval(idx)?.as_i();
                *self.cell(b, i)?
            }
            ExprKind::Deref(base) => {
                let b = self.eval(base)?;
                *self.cell(b, 0)?
            }
            ExprKind::AddrOf(n) => match self.vars.get(n.as_str()) {
                Some(Home::Seg(s)) => V::P(Some(*s)),
                _ => return Err(Stop::Trap(TrapReason::InvalidOp)),
            },
            ExprKind::Cast(_, a) => self.eval(a)?.convert(&e.ty),
            ExprKind::Call(_, args) => {
                for a in args {
                    self.eval(a)?;
                }
                // external functions are declared, never executed
                return Err(Stop::Trap(TrapReason::InvalidOp));
            }
        })
    }
}

fn binop(op: BinOp, float: bool, x: V, y: V) -> R<V> {
    if float {
        let (a, b) = (x.as_f(), y.as_f());
        return Ok(match op {
            BinOp::Add => V::F(a + b),
            BinOp::Sub => V::F(a - b),
            BinOp::Mul => V::F(a * b),
            BinOp::Div => V::F(a / b),
            BinOp::Lt => V::I((a < b) as i32),
            BinOp::Le => V::I((a <= b) as i32),
            BinOp::Gt => V::I((a > b) as i32),
            BinOp::Ge => V::I((a >= b) as i32),
            BinOp::Eq => V::I((a == b) as i32),
            BinOp::Ne => V::I((a != b) as i32),
            _ => return Err(Stop::Trap(TrapReason::InvalidOp)),
        });
    }
    let (a, b) = (x.as_i(), y.as_i());
    Ok(V::I(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div if b == 0 => return Err(Stop::Trap(TrapReason::DivByZero)),
        BinOp::Div => a.wrapping_div(b),
        BinOp::Rem if b == 0 => return Err(Stop::Trap(TrapReason::DivByZero)),
        BinOp::Rem => a.wrapping_rem(b),
        BinOp::Lt => (a < b) as i32,
        BinOp::Le => (a <= b) as i32,
        BinOp::Gt => (a > b) as i32,
        BinOp::Ge => (a >= b) as i32,
        BinOp::Eq => (a == b) as i32,
        BinOp::Ne => (a != b) as i32,
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators handled by caller"),
    }))
}

#[cfg(test)]
mod tests {
    use super::super::parse_function;
    use super::*;
    use crate::exec::OutcomeKind;

    fn run(src: &str, inputs: Inputs) -> Outcome {
        interpret(&parse_function(src).unwrap(), &inputs, 10_000)
    }

    #[test]
    fn add_one() {
        let o = run("int f(int a){return a+1;}", Inputs { scalars: vec![Scalar::Int(41)], buffers: vec![] });
        assert_eq!(o.kind, OutcomeKind::Returned(Some(Scalar::Int(42))));
    }

    #[test]
    fn infinite_loop_hits_step_limit() {
        let o = run("int f(){while(1){} }", Inputs::default());
        assert!(o.is_step_limit());
        assert_eq!(o.final_buffers, None);
    }

    #[test]
    fn doubles_buffer_in_place() {
        let o = run(
            "int f(int*p){p[0]=p[0]*2; return p[0];}",
            Inputs { scalars: vec![], buffers: vec![vec![Scalar::Int(3)]] },
        );
        assert_eq!(o.kind, OutcomeKind::Returned(Some(Scalar::Int(6))));
        assert_eq!(o.final_buffers, Some(vec![vec![Scalar::Int(6)]]));
    }

    #[test]
    fn wrapping_and_traps() {
        let i = |v| Inputs { scalars: vec![Scalar::Int(v)], buffers: vec![] };
        let o = run("int f(int a){return a*65536*65536 + 2147483647 + 1;}", i(1));
        assert_eq!(o.kind, OutcomeKind::Returned(Some(Scalar::Int(i32::MIN as i64))));
        let o = run("int f(int a){return 7/a;}", i(0));
        assert_eq!(o.kind, OutcomeKind::Trap(TrapReason::DivByZero));
        let o = run("int f(int a){return a%0;}", i(3));
        assert_eq!(o.kind, OutcomeKind::Trap(TrapReason::DivByZero));
        let o = run("int f(int a){return a/(0-1);}", i(i32::MIN as i64));
        assert_eq!(o.kind, OutcomeKind::Returned(Some(Scalar::Int(i32::MIN as i64))));
    }

    #[test]
    fn out_of_bounds_keeps_earlier_writes() {
        let o = run(
            "void f(int*p){p[0]=9; p[1]=1;}",
            Inputs { scalars: vec![], buffers: vec![vec![Scalar::Int(0)]] },
        );
        assert_eq!(o.kind, OutcomeKind::Trap(TrapReason::OutOfBounds));
        assert_eq!(o.final_buffers, Some(vec![vec![Scalar::Int(9)]]));
    }

    #[test]
    fn address_of_local() {
        let o = run("int f(int a){int x = a; int *q = &x; *q = *q + 5; return x;}", Inputs {
            scalars: vec![Scalar::Int(1)],
            buffers: vec![],
        });
        assert_eq!(o.kind, OutcomeKind::Returned(Some(Scalar::Int(6))));
        let o = run("int f(int a){int *q = &a; q[1] = 2; return a;}", Inputs {
            scalars: vec![Scalar::Int(1)],
            buffers: vec![],
        });
        assert_eq!(o.kind, OutcomeKind::Trap(TrapReason::OutOfBounds));
    }

    #[test]
    fn extern_call_traps_after_arguments() {
        let o = run(
            "extern int g(int);\nint f(int a){ return g(10/a); }",
            Inputs { scalars: vec![Scalar::Int(0)], buffers: vec![] },
        );
        assert_eq!(o.kind, OutcomeKind::Trap(TrapReason::DivByZero));
        let o = run(
            "extern int g(int);\nint f(int a){ return g(10/a); }",
            Inputs { scalars: vec![Scalar::Int(1)], buffers: vec![] },
        );
        assert_eq!(o.kind, OutcomeKind::Trap(TrapReason::InvalidOp));
    }

    #[test]
    fn float_semantics() {
        let o = run("double f(int a){ double x = a; return x / 0.0 + (double)(int)2.9; }", Inputs {
            scalars: vec![Scalar::Int(1)],
            buffers: vec![],
        });
        assert_eq!(o.kind, OutcomeKind::Returned(Some(Scalar::Float(f64::INFINITY))));
        let o = run("int f(double a){ return a; }", Inputs { scalars: vec![Scalar::Float(-3.7)], buffers: vec![] });
        assert_eq!(o.kind, OutcomeKind::Returned(Some(Scalar::Int(-3))));
    }

    #[test]
    fn mismatched_inputs_trap() {
        let o = run("int f(int a){return a;}", Inputs::default());
        assert_eq!(o.kind, OutcomeKind::Trap(TrapReason::InvalidOp));
    }

    #[test]
    fn step_accounting_is_monotone() {
        let ast = parse_function("int f(int n){int s = 0; int i; for(i=0;i<n;i=i+1){s=s+i;} return s;}").unwrap();
        let inputs = Inputs { scalars: vec![Scalar::Int(10)], buffers: vec![] };
        let mut first_ok = None;
        for limit in 1..400 {
            let o = interpret(&ast, &inputs, limit);
            if !o.is_step_limit() {
                first_ok.get_or_insert(limit);
                assert!(o.equivalent(&interpret(&ast, &inputs, limit + 1)));
            } else {
                assert!(first_ok.is_none(), "limit {limit} failed after success");
            }
        }
        assert!(first_ok.is_some());
    }
}
