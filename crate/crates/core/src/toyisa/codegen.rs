//! Code generation for both ISAs. O0 keeps every variable in a frame slot and
//! spills each non-leaf subexpression through a temporary slot; O2 works on
//! the optimized tree and, on REG, keeps variables in registers.

use std::collections::{HashMap, HashSet};

use super::asm::{AsmProgram, Instr, Opcode, Operand};
use super::opt::optimize;
use super::{CompileError, IsaId, OptLevel};
use crate::minic::{always_returns, Ast, BinOp, Expr, ExprKind, Stmt, Ty, UnOp, MAX_PARAMS};

/// Compiles a type-checked function. Output is a pure function of the inputs.
pub fn compile(ast: &Ast, isa: IsaId, opt: OptLevel) -> Result<AsmProgram, CompileError> {
    if ast.params.len() > MAX_PARAMS {
        return Err(CompileError::Unsupported(format!("{} parameters", ast.params.len())));
    }
    let ast = match opt {
        OptLevel::O0 => ast.clone(),
        OptLevel::O2 => optimize(ast),
    };
    let o2 = opt == OptLevel::O2;
    let instrs = match isa {
        IsaId::Reg => RegGen::new(&ast, o2).run(&ast),
        IsaId::Stk => StkGen::new(&ast, o2).run(&ast),
    };
    Ok(AsmProgram { isa, sig: ast.signature(), instrs })
}

// ------------------------------------------------------------------ shared

type LabelId = usize;

/// Instruction buffer with symbolic labels, resolved in `finish`.
#[derive(Default)]
struct Builder {
    code: Vec<Instr>,
    pending: Vec<LabelId>,
    pos: Vec<Option<usize>>,
}

fn placeholder(id: LabelId) -> Operand {
    Operand::Label(format!(".{id}"))
}

impl Builder {
    fn emit(&mut self, op: Opcode, args: Vec<Operand>) {
        for id in self.pending.drain(..) {
            self.pos[id] = Some(self.code.len());
        }
        self.code.push(Instr::new(op, args));
    }

    fn label(&mut self) -> LabelId {
        self.pos.push(None);
        self.pos.len() - 1
    }

    fn place(&mut self, id: LabelId) {
        self.pending.push(id);
    }

    fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// True when control cannot reach the next emitted instruction by falling through.
    fn ends_in_jump(&self) -> bool {
        !self.has_pending() && matches!(self.code.last().map(|i| i.op), Some(Opcode::Jmp | Opcode::Ret))
    }

    fn finish(mut self, entry: &str) -> Vec<Instr> {
        if self.has_pending() || self.code.is_empty() {
            self.emit(Opcode::Nop, vec![]);
        }
        let mut positions: Vec<usize> = self.pos.iter().flatten().copied().collect();
        positions.push(0);
        positions.sort_unstable();
        positions.dedup();
        let mut names: HashMap<usize, String> = HashMap::new();
        for (n, p) in positions.iter().enumerate() {
            names.insert(*p, if *p == 0 { entry.to_string() } else { format!("L{n}") });
        }
        for (p, name) in &names {
            self.code[*p].label = Some(name.clone());
        }
        let by_id: Vec<Option<String>> = self.pos.iter().map(|p| p.map(|p| names[&p].clone())).collect();
        for ins in &mut self.code {
            for a in &mut ins.args {
                if let Operand::Label(l) = a {
                    if let Some(id) = l.strip_prefix('.') {
                        let id: usize = id.parse().expect("label placeholder");
                        *l = by_id[id].clone().expect("label placed");
                    }
                }
            }
        }
        self.code
    }
}

/// Every variable with its resolved type, params first, then locals in order
/// of first appearance.
fn variables(ast: &Ast) -> Vec<(String, Ty)> {
    let mut out: Vec<(String, Ty)> = ast.params.iter().map(|p| (p.name.clone(), p.ty.resolve())).collect();
    let mut seen: HashSet<String> = out.iter().map(|(n, _)| n.clone()).collect();
    ast.walk_stmts(&mut |s| {
        if let Stmt::Decl { name, ty, .. } = s {
            if seen.insert(name.clone()) {
                out.push((name.clone(), ty.resolve()));
            }
        }
        for e in s.exprs() {
            e.walk(&mut |e| {
                if let ExprKind::Var(n) = &e.kind {
                    if seen.insert(n.clone()) {
                        out.push((n.clone(), e.ty.clone()));
                    }
                }
            });
        }
    });
    out
}

fn binary_opcode(op: BinOp, float: bool) -> Opcode {
    use Opcode::*;
    match (op, float) {
        (BinOp::Add, false) => Add,
        (BinOp::Sub, false) => Sub,
        (BinOp::Mul, false) => Mul,
        (BinOp::Div, false) => Div,
        (BinOp::Rem, _) => Rem,
        (BinOp::Lt, false) => Slt,
        (BinOp::Le, false) => Sle,
        (BinOp::Gt, false) => Sgt,
        (BinOp::Ge, false) => Sge,
        (BinOp::Eq, false) => Seq,
        (BinOp::Ne, false) => Sne,
        (BinOp::Add, true) => Fadd,
        (BinOp::Sub, true) => Fsub,
        (BinOp::Mul, true) => Fmul,
        (BinOp::Div, true) => Fdiv,
        (BinOp::Lt, true) => Flt,
        (BinOp::Le, true) => Fle,
        (BinOp::Gt, true) => Fgt,
        (BinOp::Ge, true) => Fge,
        (BinOp::Eq, true) => Feq,
        (BinOp::Ne, true) => Fne,
        (BinOp::And | BinOp::Or, _) => unreachable!("logical operators are lowered to branches"),
    }
}

fn conversion(from: &Ty, to: &Ty) -> Option<Opcode> {
    match (from, to) {
        (Ty::Int, Ty::Float) => Some(Opcode::Itof),
        (Ty::Float, Ty::Int) => Some(Opcode::Ftoi),
        _ => None,
    }
}

fn is_float_op(a: &Expr, b: &Expr) -> bool {
    a.ty == Ty::Float || b.ty == Ty::Float
}

fn literal_truth(e: &Expr) -> Option<bool> {
    match e.kind {
        ExprKind::IntLit(v) => Some(v != 0),
        ExprKind::FloatLit(v) => Some(v != 0.0),
        _ => None,
    }
}

/// Zero value of a variable type: ints and null pointers are both the zero word.
fn zero_imm(ty: &Ty) -> Operand {
    if *ty == Ty::Float {
        Operand::FImm(0.0)
    } else {
        Operand::Imm(0)
    }
}

// --------------------------------------------------------------------- REG

#[derive(Debug, Clone, Copy)]
enum Home {
    Reg(u8),
    Slot(u32),
    /// Address-taken: the register holds a pointer to a one-cell segment.
    SegReg(u8),
    /// Address-taken: the slot holds a pointer to a one-cell segment.
    SegSlot(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    /// A temporary owned by the current expression.
    Tmp(u8),
    /// A variable's home register; read-only.
    Var(u8),
}

impl Val {
    fn r(self) -> u8 {
        match self {
            Val::Tmp(r) | Val::Var(r) => r,
        }
    }
}

enum Held {
    Val(Val),
    Slot(u32),
}

/// A memory location `[base+index]` or `[base+offset]`.
struct Addr {
    base: Val,
    index: Option<Val>,
    offset: u32,
}

impl Addr {
    fn operand(&self) -> Operand {
        match self.index {
            Some(i) => Operand::MemRR(self.base.r(), i.r()),
            None => Operand::MemRI(self.base.r(), self.offset),
        }
    }
}

const LOCAL_REGS: std::ops::Range<u8> = 6..12;

struct RegGen {
    b: Builder,
    o2: bool,
    homes: HashMap<String, Home>,
    /// Free temporaries, highest first so `pop` yields the lowest.
    free: Vec<u8>,
    slots: u32,
    free_slots: Vec<u32>,
    ret: Ty,
}

fn r(n: u8) -> Operand {
    Operand::Reg(n)
}

impl RegGen {
    fn new(ast: &Ast, o2: bool) -> RegGen {
        RegGen {
            b: Builder::default(),
            o2,
            homes: HashMap::new(),
            free: Vec::new(),
            slots: 0,
            free_slots: Vec::new(),
            ret: ast.ret.resolve(),
        }
    }

    fn run(mut self, ast: &Ast) -> Vec<Instr> {
        self.prologue(ast);
        self.block(&ast.body);
        if self.ret.is_void() && (self.b.has_pending() || !always_returns(&ast.body)) {
            self.b.emit(Opcode::Ret, vec![]);
        }
        self.b.finish(&ast.name)
    }

    fn prologue(&mut self, ast: &Ast) {
        let taken: HashSet<String> = ast.address_taken().into_iter().collect();
        let vars = variables(ast);
        let np = ast.params.len() as u8;
        let mut used: HashSet<u8> = (0..np).collect();
        let mut local_regs = LOCAL_REGS.rev().collect::<Vec<u8>>();
        for (i, (name, _)) in vars.iter().enumerate() {
            let is_param = i < np as usize;
            let home = if !self.o2 {
                let k = self.new_slot();
                if taken.contains(name) {
                    Home::SegSlot(k)
                } else {
                    Home::Slot(k)
                }
            } else if is_param && !taken.contains(name) {
                Home::Reg(i as u8)
            } else if let Some(reg) = local_regs.pop() {
                used.insert(reg);
                if taken.contains(name) {
                    Home::SegReg(reg)
                } else {
                    Home::Reg(reg)
                }
            } else {
                let k = self.new_slot();
                if taken.contains(name) {
                    Home::SegSlot(k)
                } else {
                    Home::Slot(k)
                }
            };
            self.homes.insert(name.clone(), home);
        }
        // param registers stay reserved until their values are saved
        self.free = (0..16u8).rev().filter(|x| !used.contains(x)).collect();
        if !self.o2 {
            self.free.retain(|x| *x >= LOCAL_REGS.start);
        }
        for (i, p) in ast.params.iter().enumerate() {
            let src = i as u8;
            match self.homes[&p.name] {
                Home::Reg(_) => {}
                Home::Slot(k) => self.b.emit(Opcode::St, vec![Operand::Frame(k), r(src)]),
                Home::SegReg(p) => {
                    self.b.emit(Opcode::Alloc, vec![r(p), Operand::Imm(1)]);
                    self.b.emit(Opcode::St, vec![Operand::MemRI(p, 0), r(src)]);
                }
                Home::SegSlot(k) => {
                    let t = self.tmp();
                    self.b.emit(Opcode::Alloc, vec![r(t), Operand::Imm(1)]);
                    self.b.emit(Opcode::St, vec![Operand::MemRI(t, 0), r(src)]);
                    self.b.emit(Opcode::St, vec![Operand::Frame(k), r(t)]);
                    self.free_reg(t);
                }
            }
        }
        for name in ast.address_taken() {
            if ast.params.iter().any(|p| p.name == name) {
                continue;
            }
            match self.homes[&name] {
                Home::SegReg(p) => self.b.emit(Opcode::Alloc, vec![r(p), Operand::Imm(1)]),
                Home::SegSlot(k) => {
                    let t = self.tmp();
                    self.b.emit(Opcode::Alloc, vec![r(t), Operand::Imm(1)]);
                    self.b.emit(Opcode::St, vec![Operand::Frame(k), r(t)]);
                    self.free_reg(t);
                }
                _ => unreachable!("address-taken variable without a segment"),
            }
        }
        if self.o2 {
            for (i, p) in ast.params.iter().enumerate() {
                if !matches!(self.homes[&p.name], Home::Reg(_)) {
                    self.free_reg(i as u8);
                }
            }
        }
    }

    fn new_slot(&mut self) -> u32 {
        self.slots += 1;
        self.slots - 1
    }

    fn tmp_slot(&mut self) -> u32 {
        match self.free_slots.pop() {
            Some(k) => k,
            None => self.new_slot(),
        }
    }

    fn tmp(&mut self) -> u8 {
        self.free.pop().expect("temporary register pool exhausted")
    }

    fn free_reg(&mut self, x: u8) {
        self.free.push(x);
        self.free.sort_unstable_by(|a, b| b.cmp(a));
    }

    fn release(&mut self, v: Val) {
        if let Val::Tmp(x) = v {
            self.free_reg(x);
        }
    }

    /// A destination for an operation consuming `v`: reuses `v` if it is a temporary.
    fn dest_for(&mut self, v: Val) -> u8 {
        match v {
            Val::Tmp(x) => x,
            Val::Var(_) => self.tmp(),
        }
    }

    /// Keeps `v` alive across the evaluation of a sibling, spilling it when
    /// required (always at O0 for non-leaf values, otherwise under pressure).
    fn hold(&mut self, v: Val, nonleaf: bool) -> Held {
        let spill = matches!(v, Val::Tmp(_)) && ((!self.o2 && nonleaf) || self.free.len() < 2);
        if !spill {
            return Held::Val(v);
        }
        let k = self.tmp_slot();
        self.b.emit(Opcode::St, vec![Operand::Frame(k), r(v.r())]);
        self.release(v);
        Held::Slot(k)
    }

    fn unhold(&mut self, h: Held) -> Val {
        match h {
            Held::Val(v) => v,
            Held::Slot(k) => {
                let t = self.tmp();
                self.b.emit(Opcode::Ld, vec![r(t), Operand::Frame(k)]);
                self.free_slots.push(k);
                Val::Tmp(t)
            }
        }
    }

    fn convert(&mut self, v: Val, from: &Ty, to: &Ty) -> Val {
        match conversion(from, to) {
            Some(op) => {
                let d = self.dest_for(v);
                self.b.emit(op, vec![r(d), r(v.r())]);
                Val::Tmp(d)
            }
            None => v,
        }
    }

    /// Evaluates `e` and converts the result to `to`.
    fn expr_as(&mut self, e: &Expr, to: &Ty) -> Val {
        let v = self.expr(e);
        self.convert(v, &e.ty, to)
    }

    fn expr(&mut self, e: &Expr) -> Val {
        match &e.kind {
            ExprKind::IntLit(v) => {
                let t = self.tmp();
                self.b.emit(Opcode::Ldi, vec![r(t), Operand::Imm(*v as i64)]);
                Val::Tmp(t)
            }
            ExprKind::FloatLit(v) => {
                let t = self.tmp();
                self.b.emit(Opcode::Ldf, vec![r(t), Operand::FImm(*v)]);
                Val::Tmp(t)
            }
            ExprKind::StrLit(s) => {
                let t = self.tmp();
                self.b.emit(Opcode::Lds, vec![r(t), Operand::Str(s.clone())]);
                Val::Tmp(t)
            }
            ExprKind::Var(n) => self.read_var(n),
            ExprKind::AddrOf(n) => match self.homes[n] {
                Home::SegReg(p) => Val::Var(p),
                Home::SegSlot(k) => {
                    let t = self.tmp();
                    self.b.emit(Opcode::Ld, vec![r(t), Operand::Frame(k)]);
                    Val::Tmp(t)
                }
                _ => unreachable!("address of a variable without a segment"),
            },
            ExprKind::Unary(op, a) => {
                let v = self.expr(a);
                let d = self.dest_for(v);
                match (op, &a.ty) {
                    (UnOp::Neg, Ty::Float) => self.b.emit(Opcode::Fneg, vec![r(d), r(v.r())]),
                    (UnOp::Neg, _) => self.b.emit(Opcode::Neg, vec![r(d), r(v.r())]),
                    (UnOp::Not, Ty::Float) => {
                        self.b.emit(Opcode::Ftst, vec![r(d), r(v.r())]);
                        self.b.emit(Opcode::Lnot, vec![r(d), r(d)]);
                    }
                    (UnOp::Not, _) => self.b.emit(Opcode::Lnot, vec![r(d), r(v.r())]),
                }
                Val::Tmp(d)
            }
            ExprKind::Cast(_, a) => self.expr_as(a, &e.ty),
            ExprKind::Binary(op @ (BinOp::And | BinOp::Or), ..) => {
                let (other, done) = (self.b.label(), self.b.label());
                let short_value = if *op == BinOp::And {
                    self.branch_false(e, other);
                    0
                } else {
                    self.branch_true(e, other);
                    1
                };
                let t = self.tmp();
                self.b.emit(Opcode::Ldi, vec![r(t), Operand::Imm(1 - short_value)]);
                self.b.emit(Opcode::Jmp, vec![placeholder(done)]);
                self.b.place(other);
                self.b.emit(Opcode::Ldi, vec![r(t), Operand::Imm(short_value)]);
                self.b.place(done);
                Val::Tmp(t)
            }
            ExprKind::Binary(op, a, b) => {
                let float = is_float_op(a, b);
                let ty = if float { Ty::Float } else { Ty::Int };
                let va = self.expr_as(a, &ty);
                let ha = self.hold(va, !a.is_leaf());
                let vb = self.expr_as(b, &ty);
                let hb = self.hold(vb, !b.is_leaf());
                let va = self.unhold(ha);
                let vb = self.unhold(hb);
                let d = match (va, vb) {
                    (Val::Tmp(x), _) => {
                        self.release(vb);
                        x
                    }
                    (_, Val::Tmp(y)) => y,
                    _ => self.tmp(),
                };
                self.b.emit(binary_opcode(*op, float), vec![r(d), r(va.r()), r(vb.r())]);
                Val::Tmp(d)
            }
            ExprKind::Index(base, idx) => {
                let a = self.address(base, Some(idx));
                self.load(a)
            }
            ExprKind::Deref(base) => {
                let a = self.address(base, None);
                self.load(a)
            }
            ExprKind::Call(name, args) => {
                let slots: Vec<u32> = args
                    .iter()
                    .map(|a| {
                        let v = self.expr(a);
                        let k = self.tmp_slot();
                        self.b.emit(Opcode::St, vec![Operand::Frame(k), r(v.r())]);
                        self.release(v);
                        k
                    })
                    .collect();
                for (i, k) in slots.iter().enumerate() {
                    self.b.emit(Opcode::Ld, vec![r(i as u8), Operand::Frame(*k)]);
                }
                self.free_slots.extend(slots);
                self.b.emit(Opcode::Call, vec![Operand::Label(name.clone())]);
                // unreachable: external calls trap
                let t = self.tmp();
                Val::Tmp(t)
            }
        }
    }

    /// Evaluates a base pointer and an optional index, in that order.
    fn address(&mut self, base: &Expr, idx: Option<&Expr>) -> Addr {
        let vb = self.expr(base);
        let Some(idx) = idx else {
            return Addr { base: vb, index: None, offset: 0 };
        };
        if self.o2 {
            if let ExprKind::IntLit(k) = idx.kind {
                if k >= 0 {
                    return Addr { base: vb, index: None, offset: k as u32 };
                }
            }
        }
        let hb = self.hold(vb, !base.is_leaf());
        let vi = self.expr(idx);
        let hi = self.hold(vi, !idx.is_leaf());
        let base = self.unhold(hb);
        let index = self.unhold(hi);
        Addr { base, index: Some(index), offset: 0 }
    }

    fn load(&mut self, a: Addr) -> Val {
        let d = match (a.base, a.index) {
            (Val::Tmp(x), _) => x,
            (_, Some(Val::Tmp(y))) => y,
            _ => self.tmp(),
        };
        self.b.emit(Opcode::Ld, vec![r(d), a.operand()]);
        for v in [Some(a.base), a.index].into_iter().flatten() {
            if v.r() != d {
                self.release(v);
            }
        }
        Val::Tmp(d)
    }

    fn read_var(&mut self, n: &str) -> Val {
        match self.homes[n] {
            Home::Reg(x) => Val::Var(x),
            Home::Slot(k) => {
                let t = self.tmp();
                self.b.emit(Opcode::Ld, vec![r(t), Operand::Frame(k)]);
                Val::Tmp(t)
            }
            Home::SegReg(p) => {
                let t = self.tmp();
                self.b.emit(Opcode::Ld, vec![r(t), Operand::MemRI(p, 0)]);
                Val::Tmp(t)
            }
            Home::SegSlot(k) => {
                let t = self.tmp();
                self.b.emit(Opcode::Ld, vec![r(t), Operand::Frame(k)]);
                self.b.emit(Opcode::Ld, vec![r(t), Operand::MemRI(t, 0)]);
                Val::Tmp(t)
            }
        }
    }

    /// Copies `v` into register `dst`, retargeting the defining instruction
    /// when `v` was computed by the instruction just emitted.
    fn move_to(&mut self, dst: u8, v: Val) {
        if v.r() == dst {
            return;
        }
        if let Val::Tmp(t) = v {
            if !self.b.has_pending() {
                if let Some(last) = self.b.code.last_mut() {
                    if last.dest_reg() == Some(t) {
                        last.args[0] = r(dst);
                        self.release(v);
                        return;
                    }
                }
            }
        }
        self.b.emit(Opcode::Mov, vec![r(dst), r(v.r())]);
        self.release(v);
    }

    fn write_var(&mut self, n: &str, v: Val) {
        match self.homes[n] {
            Home::Reg(x) => return self.move_to(x, v),
            Home::Slot(k) => self.b.emit(Opcode::St, vec![Operand::Frame(k), r(v.r())]),
            Home::SegReg(p) => self.b.emit(Opcode::St, vec![Operand::MemRI(p, 0), r(v.r())]),
            Home::SegSlot(k) => {
                let t = self.tmp();
                self.b.emit(Opcode::Ld, vec![r(t), Operand::Frame(k)]);
                self.b.emit(Opcode::St, vec![Operand::MemRI(t, 0), r(v.r())]);
                self.free_reg(t);
            }
        }
        self.release(v);
    }

    fn block(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Decl { name, ty, init } => {
                let ty = ty.resolve();
                let v = match init {
                    Some(e) => self.expr_as(e, &ty),
                    None => {
                        let t = self.tmp();
                        let op = if ty == Ty::Float { Opcode::Ldf } else { Opcode::Ldi };
                        self.b.emit(op, vec![r(t), zero_imm(&ty)]);
                        Val::Tmp(t)
                    }
                };
                self.write_var(name, v);
            }
            Stmt::Assign { target, value } => match &target.kind {
                ExprKind::Var(n) => {
                    let v = self.expr_as(value, &target.ty);
                    self.write_var(n, v);
                }
                ExprKind::Index(base, idx) => {
                    let a = self.address(base, Some(idx));
                    self.store(target, value, a);
                }
                ExprKind::Deref(base) => {
                    let a = self.address(base, None);
                    self.store(target, value, a);
                }
                _ => unreachable!("checked lvalue"),
            },
            Stmt::If { cond, then, els } => {
                let end = self.b.label();
                match els {
                    None => {
                        self.branch_false(cond, end);
                        self.block(then);
                    }
                    Some(els) => {
                        let other = self.b.label();
                        self.branch_false(cond, other);
                        self.block(then);
                        if !self.b.ends_in_jump() {
                            self.b.emit(Opcode::Jmp, vec![placeholder(end)]);
                        }
                        self.b.place(other);
                        self.block(els);
                    }
                }
                self.b.place(end);
            }
            Stmt::While { cond, body } => {
                let (top, end) = (self.b.label(), self.b.label());
                self.b.place(top);
                self.branch_false(cond, end);
                self.block(body);
                self.b.emit(Opcode::Jmp, vec![placeholder(top)]);
                self.b.place(end);
            }
            Stmt::For { init, cond, step, body } => {
                if let Some(i) = init {
                    self.stmt(i);
                }
                let (top, end) = (self.b.label(), self.b.label());
                self.b.place(top);
                if let Some(c) = cond {
                    self.branch_false(c, end);
                }
                self.block(body);
                if let Some(st) = step {
                    self.stmt(st);
                }
                self.b.emit(Opcode::Jmp, vec![placeholder(top)]);
                self.b.place(end);
            }
            Stmt::Return(e) => {
                if let Some(e) = e {
                    let ret = self.ret.clone();
                    let v = self.expr_as(e, &ret);
                    self.move_to(0, v);
                }
                self.b.emit(Opcode::Ret, vec![]);
            }
            Stmt::Expr(e) => {
                let v = self.expr(e);
                self.release(v);
            }
        }
    }

    /// Stores `value` (converted to the target type) through `a`.
    fn store(&mut self, target: &Expr, value: &Expr, a: Addr) {
        let hb = self.hold(a.base, false);
        let hi = a.index.map(|i| self.hold(i, false));
        let v = self.expr_as(value, &target.ty);
        let hv = self.hold(v, false);
        let base = self.unhold(hb);
        let index = hi.map(|h| self.unhold(h));
        let v = self.unhold(hv);
        let a = Addr { base, index, offset: a.offset };
        self.b.emit(Opcode::St, vec![a.operand(), r(v.r())]);
        self.release(v);
        self.release(a.base);
        if let Some(i) = a.index {
            self.release(i);
        }
    }

    fn branch_false(&mut self, e: &Expr, target: LabelId) {
        match &e.kind {
            ExprKind::Unary(UnOp::Not, a) => self.branch_true(a, target),
            ExprKind::Binary(BinOp::And, a, b) => {
                self.branch_false(a, target);
                self.branch_false(b, target);
            }
            ExprKind::Binary(BinOp::Or, a, b) => {
                let skip = self.b.label();
                self.branch_true(a, skip);
                self.branch_false(b, target);
                self.b.place(skip);
            }
            _ => match literal_truth(e) {
                Some(true) => {}
                Some(false) => self.b.emit(Opcode::Jmp, vec![placeholder(target)]),
                None => {
                    let v = self.truth(e);
                    self.b.emit(Opcode::Beq, vec![r(v.r()), placeholder(target)]);
                    self.release(v);
                }
            },
        }
    }

    fn branch_true(&mut self, e: &Expr, target: LabelId) {
        match &e.kind {
            ExprKind::Unary(UnOp::Not, a) => self.branch_false(a, target),
            ExprKind::Binary(BinOp::Or, a, b) => {
                self.branch_true(a, target);
                self.branch_true(b, target);
            }
            ExprKind::Binary(BinOp::And, a, b) => {
                let skip = self.b.label();
                self.branch_false(a, skip);
                self.branch_true(b, target);
                self.b.place(skip);
            }
            _ => match literal_truth(e) {
                Some(true) => self.b.emit(Opcode::Jmp, vec![placeholder(target)]),
                Some(false) => {}
                None => {
                    let v = self.truth(e);
                    self.b.emit(Opcode::Bne, vec![r(v.r()), placeholder(target)]);
                    self.release(v);
                }
            },
        }
    }

    /// A value whose word is zero exactly when `e` is false.
    fn truth(&mut self, e: &Expr) -> Val {
        let v = self.expr(e);
        if e.ty == Ty::Float {
            let d = self.dest_for(v);
            self.b.emit(Opcode::Ftst, vec![r(d), r(v.r())]);
            return Val::Tmp(d);
        }
        v
    }
}

// --------------------------------------------------------------------- STK

#[derive(Debug, Clone, Copy)]
enum SHome {
    Slot(u32),
    SegSlot(u32),
}

struct StkGen {
    b: Builder,
    o2: bool,
    homes: HashMap<String, SHome>,
    slots: u32,
    free_slots: Vec<u32>,
    ret: Ty,
}

impl StkGen {
    fn new(ast: &Ast, o2: bool) -> StkGen {
        StkGen { b: Builder::default(), o2, homes: HashMap::new(), slots: 0, free_slots: Vec::new(), ret: ast.ret.resolve() }
    }

    fn emit(&mut self, op: Opcode, args: Vec<Operand>) {
        self.b.emit(op, args);
    }

    fn run(mut self, ast: &Ast) -> Vec<Instr> {
        let taken: HashSet<String> = ast.address_taken().into_iter().collect();
        for (name, _) in variables(ast) {
            let k = self.slots;
            self.slots += 1;
            let h = if taken.contains(&name) { SHome::SegSlot(k) } else { SHome::Slot(k) };
            self.homes.insert(name, h);
        }
        for p in ast.params.iter().rev() {
            let (SHome::Slot(k) | SHome::SegSlot(k)) = self.homes[&p.name];
            self.emit(Opcode::Store, vec![Operand::Frame(k)]);
        }
        for name in ast.address_taken() {
            let SHome::SegSlot(k) = self.homes[&name] else { unreachable!() };
            self.emit(Opcode::Alloc, vec![Operand::Imm(1)]);
            if ast.params.iter().any(|p| p.name == name) {
                self.emit(Opcode::Dup, vec![]);
                self.emit(Opcode::Push, vec![Operand::Imm(0)]);
                self.emit(Opcode::Load, vec![Operand::Frame(k)]);
                self.emit(Opcode::Stx, vec![]);
            }
            self.emit(Opcode::Store, vec![Operand::Frame(k)]);
        }
        self.block(&ast.body);
        if self.ret.is_void() && (self.b.has_pending() || !always_returns(&ast.body)) {
            self.emit(Opcode::Ret, vec![]);
        }
        self.b.finish(&ast.name)
    }

    /// O0 round-trips every non-leaf value through a temporary slot.
    fn materialize(&mut self, e: &Expr) {
        if self.o2 || e.is_leaf() {
            return;
        }
        let k = match self.free_slots.pop() {
            Some(k) => k,
            None => {
                self.slots += 1;
                self.slots - 1
            }
        };
        self.emit(Opcode::Store, vec![Operand::Frame(k)]);
        self.emit(Opcode::Load, vec![Operand::Frame(k)]);
        self.free_slots.push(k);
    }

    fn convert(&mut self, from: &Ty, to: &Ty) {
        if let Some(op) = conversion(from, to) {
            self.emit(op, vec![]);
        }
    }

    fn operand(&mut self, e: &Expr, to: &Ty) {
        self.expr(e);
        self.materialize(e);
        self.convert(&e.ty, to);
    }

    fn expr(&mut self, e: &Expr) {
        match &e.kind {
            ExprKind::IntLit(v) => self.emit(Opcode::Push, vec![Operand::Imm(*v as i64)]),
            ExprKind::FloatLit(v) => self.emit(Opcode::Push, vec![Operand::FImm(*v)]),
            ExprKind::StrLit(s) => self.emit(Opcode::Push, vec![Operand::Str(s.clone())]),
            ExprKind::Var(n) => match self.homes[n] {
                SHome::Slot(k) => self.emit(Opcode::Load, vec![Operand::Frame(k)]),
                SHome::SegSlot(k) => {
                    self.emit(Opcode::Load, vec![Operand::Frame(k)]);
                    self.emit(Opcode::Push, vec![Operand::Imm(0)]);
                    self.emit(Opcode::Ldx, vec![]);
                }
            },
            ExprKind::AddrOf(n) => {
                let (SHome::Slot(k) | SHome::SegSlot(k)) = self.homes[n];
                self.emit(Opcode::Load, vec![Operand::Frame(k)]);
            }
            ExprKind::Unary(op, a) => {
                self.operand(a, &a.ty);
                match (op, &a.ty) {
                    (UnOp::Neg, Ty::Float) => self.emit(Opcode::Fneg, vec![]),
                    (UnOp::Neg, _) => self.emit(Opcode::Neg, vec![]),
                    (UnOp::Not, Ty::Float) => {
                        self.emit(Opcode::Ftst, vec![]);
                        self.emit(Opcode::Lnot, vec![]);
                    }
                    (UnOp::Not, _) => self.emit(Opcode::Lnot, vec![]),
                }
            }
            ExprKind::Cast(_, a) => self.operand(a, &e.ty),
            ExprKind::Binary(op @ (BinOp::And | BinOp::Or), ..) => {
                let (other, done) = (self.b.label(), self.b.label());
                let short_value = if *op == BinOp::And {
                    self.branch_false(e, other);
                    0
                } else {
                    self.branch_true(e, other);
                    1
                };
                self.emit(Opcode::Push, vec![Operand::Imm(1 - short_value)]);
                self.emit(Opcode::Jmp, vec![placeholder(done)]);
                self.b.place(other);
                self.emit(Opcode::Push, vec![Operand::Imm(short_value)]);
                self.b.place(done);
            }
            ExprKind::Binary(op, a, b) => {
                let float = is_float_op(a, b);
                let ty = if float { Ty::Float } else { Ty::Int };
                self.operand(a, &ty);
                self.operand(b, &ty);
                self.emit(binary_opcode(*op, float), vec![]);
            }
            ExprKind::Index(base, idx) => {
                self.operand(base, &base.ty);
                self.operand(idx, &Ty::Int);
                self.emit(Opcode::Ldx, vec![]);
            }
            ExprKind::Deref(base) => {
                self.operand(base, &base.ty);
                self.emit(Opcode::Push, vec![Operand::Imm(0)]);
                self.emit(Opcode::Ldx, vec![]);
            }
            ExprKind::Call(name, args) => {
                for a in args {
                    self.operand(a, &a.ty);
                }
                self.emit(Opcode::Call, vec![Operand::Label(name.clone()), Operand::Imm(args.len() as i64)]);
            }
        }
    }

    fn block(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            self.stmt(s);
        }
    }

    /// Stores the value computed by `value` into variable `n`.
    fn write_var(&mut self, n: &str, value: impl FnOnce(&mut Self)) {
        match self.homes[n] {
            SHome::Slot(k) => {
                value(self);
                self.emit(Opcode::Store, vec![Operand::Frame(k)]);
            }
            SHome::SegSlot(k) => {
                self.emit(Opcode::Load, vec![Operand::Frame(k)]);
                self.emit(Opcode::Push, vec![Operand::Imm(0)]);
                value(self);
                self.emit(Opcode::Stx, vec![]);
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::Decl { name, ty, init } => {
                let ty = ty.resolve();
                self.write_var(name, |g| match init {
                    Some(e) => g.operand(e, &ty),
                    None => g.emit(Opcode::Push, vec![zero_imm(&ty)]),
                });
            }
            Stmt::Assign { target, value } => match &target.kind {
                ExprKind::Var(n) => self.write_var(n, |g| g.operand(value, &target.ty)),
                ExprKind::Index(base, idx) => {
                    self.operand(base, &base.ty);
                    self.operand(idx, &Ty::Int);
                    self.operand(value, &target.ty);
                    self.emit(Opcode::Stx, vec![]);
                }
                ExprKind::Deref(base) => {
                    self.operand(base, &base.ty);
                    self.emit(Opcode::Push, vec![Operand::Imm(0)]);
                    self.operand(value, &target.ty);
                    self.emit(Opcode::Stx, vec![]);
                }
                _ => unreachable!("checked lvalue"),
            },
            Stmt::If { cond, then, els } => {
                let end = self.b.label();
                match els {
                    None => {
                        self.branch_false(cond, end);
                        self.block(then);
                    }
                    Some(els) => {
                        let other = self.b.label();
                        self.branch_false(cond, other);
                        self.block(then);
                        if !self.b.ends_in_jump() {
                            self.emit(Opcode::Jmp, vec![placeholder(end)]);
                        }
                        self.b.place(other);
                        self.block(els);
                    }
                }
                self.b.place(end);
            }
            Stmt::While { cond, body } => {
                let (top, end) = (self.b.label(), self.b.label());
                self.b.place(top);
                self.branch_false(cond, end);
                self.block(body);
                self.emit(Opcode::Jmp, vec![placeholder(top)]);
                self.b.place(end);
            }
            Stmt::For { init, cond, step, body } => {
                if let Some(i) = init {
                    self.stmt(i);
                }
                let (top, end) = (self.b.label(), self.b.label());
                self.b.place(top);
                if let Some(c) = cond {
                    self.branch_false(c, end);
                }
                self.block(body);
                if let Some(st) = step {
                    self.stmt(st);
                }
                self.emit(Opcode::Jmp, vec![placeholder(top)]);
                self.b.place(end);
            }
            Stmt::Return(e) => {
                if let Some(e) = e {
                    let ret = self.ret.clone();
                    self.operand(e, &ret);
                }
                self.emit(Opcode::Ret, vec![]);
            }
            Stmt::Expr(e) => {
                self.expr(e);
                self.emit(Opcode::Pop, vec![]);
            }
        }
    }

    fn branch_false(&mut self, e: &Expr, target: LabelId) {
        match &e.kind {
            ExprKind::Unary(UnOp::Not, a) => self.branch_true(a, target),
            ExprKind::Binary(BinOp::And, a, b) => {
                self.branch_false(a, target);
                self.branch_false(b, target);
            }
            ExprKind::Binary(BinOp::Or, a, b) => {
                let skip = self.b.label();
                self.branch_true(a, skip);
                self.branch_false(b, target);
                self.b.place(skip);
            }
            _ => match literal_truth(e) {
                Some(true) => {}
                Some(false) => self.emit(Opcode::Jmp, vec![placeholder(target)]),
                None => {
                    self.truth(e);
                    self.emit(Opcode::Beq, vec![placeholder(target)]);
                }
            },
        }
    }

    fn branch_true(&mut self, e: &Expr, target: LabelId) {
        match &e.kind {
            ExprKind::Unary(UnOp::Not, a) => self.branch_false(a, target),
            ExprKind::Binary(BinOp::Or, a, b) => {
                self.branch_true(a, target);
                self.branch_true(b, target);
            }
            ExprKind::Binary(BinOp::And, a, b) => {
                let skip = self.b.label();
                self.branch_false(a, skip);
                self.branch_true(b, target);
                self.b.place(skip);
            }
            _ => match literal_truth(e) {
                Some(true) => self.emit(Opcode::Jmp, vec![placeholder(target)]),
                Some(false) => {}
                None => {
                    self.truth(e);
                    self.emit(Opcode::Bne, vec![placeholder(target)]);
                }
            },
        }
    }

    fn truth(&mut self, e: &Expr) {
        self.expr(e);
        self.materialize(e);
        if e.ty == Ty::Float {
            self.emit(Opcode::Ftst, vec![]);
        }
    }
}
