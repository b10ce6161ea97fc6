//! Interpreters for both toy ISAs. Registers, stack cells and memory hold raw
//! 64-bit words: ints are sign-extended 32-bit values, floats are IEEE bits,
//! pointers are segment numbers plus one (zero is null).

use std::collections::HashMap;

use super::asm::{AsmProgram, Opcode, Operand};
use super::IsaId;
use crate::exec::{f2i, wrap_i32, Inputs, Outcome, Scalar, TrapReason};
use crate::minic::Ty;

type Word = u64;

enum Stop {
    Trap(TrapReason),
    StepLimit,
    Return(Option<Word>),
}

fn int(w: Word) -> i32 {
    w as i32
}

fn from_int(v: i32) -> Word {
    v as i64 as u64
}

fn flt(w: Word) -> f64 {
    f64::from_bits(w)
}

fn from_flt(v: f64) -> Word {
    v.to_bits()
}

fn from_bool(b: bool) -> Word {
    b as u64
}

fn encode(s: &Scalar) -> Word {
    match *s {
        Scalar::Int(v) => from_int(wrap_i32(v)),
        Scalar::Float(v) => from_flt(v),
    }
}

fn decode(w: Word, ty: &Ty) -> Scalar {
    match ty.resolve() {
        Ty::Float => Scalar::Float(flt(w)),
        Ty::Int => Scalar::Int(int(w) as i64),
        _ => Scalar::Int(0),
    }
}

struct Vm<'a> {
    prog: &'a AsmProgram,
    targets: HashMap<&'a str, usize>,
    regs: [Word; 16],
    stack: Vec<Word>,
    frame: Vec<Word>,
    segments: Vec<Vec<Word>>,
}

/// Executes `prog` on `inputs`, one step per instruction.
pub fn run_vm(prog: &AsmProgram, inputs: &Inputs, step_limit: u64) -> Outcome {
    let sig = &prog.sig;
    if !inputs.fits(sig) {
        return Outcome::trap(TrapReason::InvalidOp, inputs.buffers.clone());
    }
    let mut targets = HashMap::new();
    for (i, ins) in prog.instrs.iter().enumerate() {
        if let Some(l) = &ins.label {
            targets.insert(l.as_str(), i);
        }
    }
    let mut vm = Vm {
        prog,
        targets,
        regs: [0; 16],
        stack: Vec::new(),
        frame: Vec::new(),
        segments: inputs.buffers.iter().map(|b| b.iter().map(encode).collect()).collect(),
    };
    let (mut si, mut bi) = (0, 0);
    let mut args = Vec::with_capacity(sig.params.len());
    for t in &sig.params {
        if t.is_ptr() {
            bi += 1;
            args.push(bi as Word);
        } else {
            args.push(encode(&inputs.scalars[si]));
            si += 1;
        }
    }
    match prog.isa {
        IsaId::Reg => vm.regs[..args.len()].copy_from_slice(&args),
        IsaId::Stk => vm.stack = args,
    }
    let stop = vm.run(step_limit);
    let elems: Vec<Ty> = sig.pointer_params().filter_map(Ty::elem).collect();
    let buffers: Vec<Vec<Scalar>> = vm.segments[..elems.len()]
        .iter()
        .zip(&elems)
        .map(|(seg, t)| seg.iter().map(|w| decode(*w, t)).collect())
        .collect();
    match stop {
        Stop::Return(w) => Outcome::returned(w.map(|w| decode(w, &sig.ret)), buffers),
        Stop::Trap(r) => Outcome::trap(r, buffers),
        Stop::StepLimit => Outcome::step_limit(),
    }
}

type R<T> = Result<T, Stop>;

const INVALID: Stop = Stop::Trap(TrapReason::InvalidOp);

impl<'a> Vm<'a> {
    fn run(&mut self, limit: u64) -> Stop {
        let mut pc = 0usize;
        let mut steps = 0u64;
        loop {
            if pc >= self.prog.instrs.len() {
                return INVALID;
            }
            steps += 1;
            if steps > limit {
                return Stop::StepLimit;
            }
            let r = match self.prog.isa {
                IsaId::Reg => self.step_reg(pc),
                IsaId::Stk => self.step_stk(pc),
            };
            match r {
                Ok(next) => pc = next,
                Err(s) => return s,
            }
        }
    }

    fn target(&self, o: &Operand) -> R<usize> {
        match o {
            Operand::Label(l) => self.targets.get(l.as_str()).copied().ok_or(INVALID),
            _ => Err(INVALID),
        }
    }

    fn cell(&mut self, ptr: Word, idx: i64) -> R<&mut Word> {
        if ptr == 0 || ptr as usize > self.segments.len() {
            return Err(Stop::Trap(TrapReason::OutOfBounds));
        }
        let seg = &mut self.segments[ptr as usize - 1];
        if idx < 0 || idx as usize >= seg.len() {
            return Err(Stop::Trap(TrapReason::OutOfBounds));
        }
        Ok(&mut seg[idx as usize])
    }

    fn alloc(&mut self, cells: Vec<Word>) -> Word {
        self.segments.push(cells);
        self.segments.len() as Word
    }

    fn frame_read(&self, k: u32) -> Word {
        self.frame.get(k as usize).copied().unwrap_or(0)
    }

    fn frame_write(&mut self, k: u32, w: Word) {
        let k = k as usize;
        if k >= self.frame.len() {
            self.frame.resize(k + 1, 0);
        }
        self.frame[k] = w;
    }

    fn string(&mut self, s: &str) -> Word {
        let mut cells: Vec<Word> = s.bytes().map(|b| b as Word).collect();
        cells.push(0);
        self.alloc(cells)
    }

    fn reg(&self, o: &Operand) -> R<Word> {
        match o {
            Operand::Reg(r) => Ok(self.regs[*r as usize]),
            _ => Err(INVALID),
        }
    }

    fn set(&mut self, o: &Operand, w: Word) -> R<()> {
        match o {
            Operand::Reg(r) => {
                self.regs[*r as usize] = w;
                Ok(())
            }
            _ => Err(INVALID),
        }
    }

    fn mem_read(&mut self, o: &Operand) -> R<Word> {
        match *o {
            Operand::Frame(k) => Ok(self.frame_read(k)),
            Operand::MemRR(b, i) => {
                let (p, i) = (self.regs[b as usize], int(self.regs[i as usize]) as i64);
                Ok(*self.cell(p, i)?)
            }
            Operand::MemRI(b, k) => {
                let p = self.regs[b as usize];
                Ok(*self.cell(p, k as i64)?)
            }
            _ => Err(INVALID),
        }
    }

    fn mem_write(&mut self, o: &Operand, w: Word) -> R<()> {
        match *o {
            Operand::Frame(k) => self.frame_write(k, w),
            Operand::MemRR(b, i) => {
                let (p, i) = (self.regs[b as usize], int(self.regs[i as usize]) as i64);
                *self.cell(p, i)? = w;
            }
            Operand::MemRI(b, k) => {
                let p = self.regs[b as usize];
                *self.cell(p, k as i64)? = w;
            }
            _ => return Err(INVALID),
        }
        Ok(())
    }

    fn step_reg(&mut self, pc: usize) -> R<usize> {
        let ins = &self.prog.instrs[pc];
        let a = &ins.args;
        match ins.op {
            Opcode::Ldi => match a[1] {
                Operand::Imm(v) => self.set(&a[0], from_int(v as i32))?,
                _ => return Err(INVALID),
            },
            Opcode::Ldf => match a[1] {
                Operand::FImm(v) => self.set(&a[0], from_flt(v))?,
                _ => return Err(INVALID),
            },
            Opcode::Lds => match &a[1] {
                Operand::Str(s) => {
                    let p = self.string(s);
                    self.set(&a[0], p)?
                }
                _ => return Err(INVALID),
            },
            Opcode::Mov => {
                let v = self.reg(&a[1])?;
                self.set(&a[0], v)?
            }
            Opcode::Ld => {
                let v = self.mem_read(&a[1])?;
                self.set(&a[0], v)?
            }
            Opcode::St => {
                let v = self.reg(&a[1])?;
                self.mem_write(&a[0], v)?
            }
            Opcode::Alloc => match a[1] {
                Operand::Imm(n) if (1..=crate::exec::MAX_BUFFER_LEN as i64).contains(&n) => {
                    let p = self.alloc(vec![0; n as usize]);
                    self.set(&a[0], p)?
                }
                _ => return Err(INVALID),
            },
            Opcode::Jmp => return self.target(&a[0]),
            Opcode::Beq | Opcode::Bne => {
                let zero = self.reg(&a[0])? == 0;
                if zero == (ins.op == Opcode::Beq) {
                    return self.target(&a[1]);
                }
            }
            Opcode::Call => return Err(INVALID),
            Opcode::Ret => return Err(Stop::Return((!self.prog.sig.ret.is_void()).then_some(self.regs[0]))),
            Opcode::Nop => {}
            op if op.is_binary() => {
                let (x, y) = (self.reg(&a[1])?, self.reg(&a[2])?);
                let v = binary(op, x, y)?;
                self.set(&a[0], v)?
            }
            op if op.is_unary() => {
                let x = self.reg(&a[1])?;
                self.set(&a[0], unary(op, x))?
            }
            _ => return Err(INVALID),
        }
        Ok(pc + 1)
    }

    fn pop(&mut self) -> R<Word> {
        self.stack.pop().ok_or(INVALID)
    }

    fn step_stk(&mut self, pc: usize) -> R<usize> {
        let ins = &self.prog.instrs[pc];
        let a = &ins.args;
        match ins.op {
            Opcode::Push => {
                let w = match &a[0] {
                    Operand::Imm(v) => from_int(*v as i32),
                    Operand::FImm(v) => from_flt(*v),
                    Operand::Str(s) => self.string(s),
                    _ => return Err(INVALID),
                };
                self.stack.push(w);
            }
            Opcode::Pop => {
                self.pop()?;
            }
            Opcode::Dup => {
                let w = *self.stack.last().ok_or(INVALID)?;
                self.stack.push(w);
            }
            Opcode::Load => match a[0] {
                Operand::Frame(k) => self.stack.push(self.frame_read(k)),
                _ => return Err(INVALID),
            },
            Opcode::Store => match a[0] {
                Operand::Frame(k) => {
                    let w = self.pop()?;
                    self.frame_write(k, w)
                }
                _ => return Err(INVALID),
            },
            Opcode::Ldx => {
                let i = int(self.pop()?) as i64;
                let p = self.pop()?;
                let w = *self.cell(p, i)?;
                self.stack.push(w);
            }
            Opcode::Stx => {
                let w = self.pop()?;
                let i = int(self.pop()?) as i64;
                let p = self.pop()?;
                *self.cell(p, i)? = w;
            }
            Opcode::Alloc => match a[0] {
                Operand::Imm(n) if (1..=crate::exec::MAX_BUFFER_LEN as i64).contains(&n) => {
                    let p = self.alloc(vec![0; n as usize]);
                    self.stack.push(p);
                }
                _ => return Err(INVALID),
            },
            Opcode::Jmp => return self.target(&a[0]),
            Opcode::Beq | Opcode::Bne => {
                let zero = self.pop()? == 0;
                if zero == (ins.op == Opcode::Beq) {
                    return self.target(&a[0]);
                }
            }
            Opcode::Call => {
                let n = match a[1] {
                    Operand::Imm(n) => n,
                    _ => return Err(INVALID),
                };
                for _ in 0..n {
                    self.pop()?;
                }
                // external functions are never executed
                return Err(INVALID);
            }
            Opcode::Ret => {
                let v = if self.prog.sig.ret.is_void() { None } else { Some(self.pop()?) };
                return Err(Stop::Return(v));
            }
            Opcode::Nop => {}
            op if op.is_binary() => {
                let y = self.pop()?;
                let x = self.pop()?;
                self.stack.push(binary(op, x, y)?);
            }
            op if op.is_unary() => {
                let x = self.pop()?;
                self.stack.push(unary(op, x));
            }
            _ => return Err(INVALID),
        }
        Ok(pc + 1)
    }
}

fn binary(op: Opcode, x: Word, y: Word) -> R<Word> {
    let (a, b) = (int(x), int(y));
    let (f, g) = (flt(x), flt(y));
    Ok(match op {
        Opcode::Add => from_int(a.wrapping_add(b)),
        Opcode::Sub => from_int(a.wrapping_sub(b)),
        Opcode::Mul => from_int(a.wrapping_mul(b)),
        Opcode::Div | Opcode::Rem if b == 0 => return Err(Stop::Trap(TrapReason::DivByZero)),
        Opcode::Div => from_int(a.wrapping_div(b)),
        Opcode::Rem => from_int(a.wrapping_rem(b)),
        Opcode::Seq => from_bool(a == b),
        Opcode::Sne => from_bool(a != b),
        Opcode::Slt => from_bool(a < b),
        Opcode::Sle => from_bool(a <= b),
        Opcode::Sgt => from_bool(a > b),
        Opcode::Sge => from_bool(a >= b),
        Opcode::Fadd => from_flt(f + g),
        Opcode::Fsub => from_flt(f - g),
        Opcode::Fmul => from_flt(f * g),
        Opcode::Fdiv => from_flt(f / g),
        Opcode::Feq => from_bool(f == g),
        Opcode::Fne => from_bool(f != g),
        Opcode::Flt => from_bool(f < g),
        Opcode::Fle => from_bool(f <= g),
        Opcode::Fgt => from_bool(f > g),
        Opcode::Fge => from_bool(f >= g),
        _ => return Err(INVALID),
    })
}

fn unary(op: Opcode, x: Word) -> Word {
    match op {
        Opcode::Neg => from_int(int(x).wrapping_neg()),
        // lnot also tests pointers, so it looks at the whole word
        Opcode::Lnot => from_bool(x == 0),
        Opcode::Fneg => from_flt(-flt(x)),
        Opcode::Itof => from_flt(int(x) as f64),
        Opcode::Ftoi => from_int(f2i(flt(x))),
        Opcode::Ftst => from_bool(flt(x) != 0.0),
        _ => unreachable!("not a unary opcode"),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_asm;
    use super::*;
    use crate::exec::OutcomeKind;

    #[test]
    fn store_then_load_round_trips() {
        // hand trace: r1 <- 9; buf[0] <- r1; r0 <- buf[0]
        let p = parse_asm(".isa reg\n.sig int f(int *)\nf: ldi r1, #9\nst [r0+0], r1\nld r0, [r0+0]\nret\n").unwrap();
        let out = run_vm(&p, &Inputs { scalars: vec![], buffers: vec![vec![Scalar::Int(4)]] }, 100);
        assert_eq!(out.kind, OutcomeKind::Returned(Some(Scalar::Int(9))));
        assert_eq!(out.final_buffers, Some(vec![vec![Scalar::Int(9)]]));
    }

    #[test]
    fn infinite_loop_hits_step_limit() {
        for text in [".isa reg\n.sig void f()\nf: jmp f\n", ".isa stk\n.sig void f()\nf: jmp f\n"] {
            let p = parse_asm(text).unwrap();
            assert!(run_vm(&p, &Inputs::default(), 1000).is_step_limit());
        }
    }

    #[test]
    fn stack_machine_arith() {
        let p = parse_asm(".isa stk\n.sig int f(int, int)\nf: sub\npush #3\nmul\nret\n").unwrap();
        let out = run_vm(&p, &Inputs { scalars: vec![Scalar::Int(10), Scalar::Int(4)], buffers: vec![] }, 100);
        assert_eq!(out.kind, OutcomeKind::Returned(Some(Scalar::Int(18))));
    }

    #[test]
    fn traps() {
        let div = parse_asm(".isa reg\n.sig int f(int)\nf: ldi r1, #0\ndiv r0, r0, r1\nret\n").unwrap();
        let out = run_vm(&div, &Inputs { scalars: vec![Scalar::Int(1)], buffers: vec![] }, 100);
        assert_eq!(out.kind, OutcomeKind::Trap(TrapReason::DivByZero));
        let oob = parse_asm(".isa stk\n.sig int f(int *)\nf: push #7\nldx\nret\n").unwrap();
        let out = run_vm(&oob, &Inputs { scalars: vec![], buffers: vec![vec![Scalar::Int(1)]] }, 100);
        assert_eq!(out.kind, OutcomeKind::Trap(TrapReason::OutOfBounds));
        let fall = parse_asm(".isa reg\n.sig int f()\nf: nop\n").unwrap();
        assert_eq!(run_vm(&fall, &Inputs::default(), 100).kind, OutcomeKind::Trap(TrapReason::InvalidOp));
        let bad_inputs = Inputs { scalars: vec![Scalar::Float(1.0)], buffers: vec![] };
        assert_eq!(run_vm(&div, &bad_inputs, 100).kind, OutcomeKind::Trap(TrapReason::InvalidOp));
    }

    #[test]
    fn one_step_per_instruction() {
        let p = parse_asm(".isa reg\n.sig int f()\nf: ldi r0, #1\nnop\nret\n").unwrap();
        assert!(run_vm(&p, &Inputs::default(), 2).is_step_limit());
        assert!(!run_vm(&p, &Inputs::default(), 3).is_step_limit());
    }
}
