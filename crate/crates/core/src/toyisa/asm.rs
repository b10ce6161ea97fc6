//! Assembler programs and their frozen text form. See `docs/asm-format.md`.

use std::collections::HashSet;
use std::fmt::{self, Write};

use super::{AsmError, IsaId};
use crate::minic::{Signature, Ty};

pub const NUM_REGS: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    // data movement
    Ldi,
    Ldf,
    Lds,
    Mov,
    Ld,
    St,
    Alloc,
    Push,
    Pop,
    Dup,
    Load,
    Store,
    Ldx,
    Stx,
    // integer
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Neg,
    Lnot,
    Seq,
    Sne,
    Slt,
    Sle,
    Sgt,
    Sge,
    // float
    Fadd,
    Fsub,
    Fmul,
    Fdiv,
    Fneg,
    Feq,
    Fne,
    Flt,
    Fle,
    Fgt,
    Fge,
    Itof,
    Ftoi,
    Ftst,
    // control
    Jmp,
    Beq,
    Bne,
    Call,
    Ret,
    Nop,
}

use Opcode::*;

const ALL_OPCODES: [Opcode; 47] = [
    Ldi, Ldf, Lds, Mov, Ld, St, Alloc, Push, Pop, Dup, Load, Store, Ldx, Stx, Add, Sub, Mul, Div, Rem, Neg,
    Lnot, Seq, Sne, Slt, Sle, Sgt, Sge, Fadd, Fsub, Fmul, Fdiv, Fneg, Feq, Fne, Flt, Fle, Fgt, Fge, Itof,
    Ftoi, Ftst, Jmp, Beq, Bne, Call, Ret, Nop,
];

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Ldi => "ldi",
            Ldf => "ldf",
            Lds => "lds",
            Mov => "mov",
            Ld => "ld",
            St => "st",
            Alloc => "alloc",
            Push => "push",
            Pop => "pop",
            Dup => "dup",
            Load => "load",
            Store => "store",
            Ldx => "ldx",
            Stx => "stx",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            Rem => "rem",
            Neg => "neg",
            Lnot => "lnot",
            Seq => "seq",
            Sne => "sne",
            Slt => "slt",
            Sle => "sle",
            Sgt => "sgt",
            Sge => "sge",
            Fadd => "fadd",
            Fsub => "fsub",
            Fmul => "fmul",
            Fdiv => "fdiv",
            Fneg => "fneg",
            Feq => "feq",
            Fne => "fne",
            Flt => "flt",
            Fle => "fle",
            Fgt => "fgt",
            Fge => "fge",
            Itof => "itof",
            Ftoi => "ftoi",
            Ftst => "ftst",
            Jmp => "jmp",
            Beq => "beq",
            Bne => "bne",
            Call => "call",
            Ret => "ret",
            Nop => "nop",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        ALL_OPCODES.iter().copied().find(|o| o.mnemonic() == s)
    }

    /// Binary operators: three registers on REG, two pops and a push on STK.
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Add | Sub | Mul | Div | Rem | Seq | Sne | Slt | Sle | Sgt | Sge | Fadd | Fsub | Fmul | Fdiv | Feq | Fne
                | Flt | Fle | Fgt | Fge
        )
    }

    pub fn is_unary(self) -> bool {
        matches!(self, Neg | Lnot | Fneg | Itof | Ftoi | Ftst)
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Jmp | Beq | Bne)
    }

    pub fn available_on(self, isa: IsaId) -> bool {
        if self.is_binary() || self.is_unary() || matches!(self, Alloc | Jmp | Beq | Bne | Call | Ret | Nop) {
            return true;
        }
        match isa {
            IsaId::Reg => matches!(self, Ldi | Ldf | Lds | Mov | Ld | St),
            IsaId::Stk => matches!(self, Push | Pop | Dup | Load | Store | Ldx | Stx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Reg(u8),
    Imm(i64),
    FImm(f64),
    Str(String),
    /// Branch target or external symbol.
    Label(String),
    /// `[fp+k]`: frame slot.
    Frame(u32),
    /// `[rB+rI]`: segment element at a register index.
    MemRR(u8, u8),
    /// `[rB+k]`: segment element at a constant index.
    MemRI(u8, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instr {
    pub label: Option<String>,
    pub op: Opcode,
    pub args: Vec<Operand>,
}

impl Instr {
    pub fn new(op: Opcode, args: Vec<Operand>) -> Instr {
        Instr { label: None, op, args }
    }

    /// The register written by this instruction, if any (REG only).
    pub fn dest_reg(&self) -> Option<u8> {
        if matches!(self.op, St | Jmp | Beq | Bne | Call | Ret | Nop) {
            return None;
        }
        match self.args.first() {
            Some(Operand::Reg(r)) => Some(*r),
            _ => None,
        }
    }
}

/// A function in one of the toy ISAs. The first instruction carries the
/// entry label, which is the function name.
#[derive(Debug, Clone, PartialEq)]
pub struct AsmProgram {
    pub isa: IsaId,
    pub sig: Signature,
    pub instrs: Vec<Instr>,
}

impl AsmProgram {
    pub fn entry(&self) -> &str {
        &self.sig.name
    }

    pub fn count(&self, op: Opcode) -> usize {
        self.instrs.iter().filter(|i| i.op == op).count()
    }
}

fn escape(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "r{r}"),
            Operand::Imm(v) => write!(f, "#{v}"),
            Operand::FImm(v) => write!(f, "#{}", crate::minic::print_float(*v)),
            Operand::Str(s) => write!(f, "\"{}\"", escape(s)),
            Operand::Label(l) => f.write_str(l),
            Operand::Frame(k) => write!(f, "[fp+{k}]"),
            Operand::MemRR(b, i) => write!(f, "[r{b}+r{i}]"),
            Operand::MemRI(b, k) => write!(f, "[r{b}+{k}]"),
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = &self.label {
            write!(f, "{l}: ")?;
        }
        f.write_str(self.op.mnemonic())?;
        for (i, a) in self.args.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Renders the program in the frozen text syntax.
pub fn emit_asm(prog: &AsmProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, ".isa {}", prog.isa);
    let _ = writeln!(out, ".sig {}", prog.sig);
    for i in &prog.instrs {
        let _ = writeln!(out, "{i}");
    }
    out
}

// ---------------------------------------------------------------- parsing

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax { line, msg: msg.into() }
}

fn bad(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::BadOperand { line, msg: msg.into() }
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_sig_ty(s: &str) -> Option<Ty> {
    let s = s.trim();
    if let Some(base) = s.strip_suffix('*') {
        return match base.trim() {
            "int" => Some(Ty::ptr(Ty::Int)),
            "double" => Some(Ty::ptr(Ty::Float)),
            _ => None,
        };
    }
    match s {
        "int" => Some(Ty::Int),
        "double" => Some(Ty::Float),
        "void" => Some(Ty::Void),
        _ => None,
    }
}

/// Parses `ret name(t1, t2, ...)`.
fn parse_sig(s: &str, line: usize) -> Result<Signature, AsmError> {
    let err = || syntax(line, format!("malformed signature `{s}`"));
    let open = s.find('(').ok_or_else(err)?;
    let close = s.rfind(')').ok_or_else(err)?;
    if close != s.len() - 1 || close < open {
        return Err(err());
    }
    let head = s[..open].trim();
    let split = head.rfind(|c: char| c == ' ' || c == '*').ok_or_else(err)?;
    let (ret, name) = (&head[..=split], head[split + 1..].trim());
    if !is_ident(name) {
        return Err(err());
    }
    let ret = parse_sig_ty(ret).ok_or_else(err)?;
    let inner = s[open + 1..close].trim();
    let mut params = Vec::new();
    if !inner.is_empty() {
        for p in inner.split(',') {
            match parse_sig_ty(p) {
                Some(t) if !t.is_void() => params.push(t),
                _ => return Err(err()),
            }
        }
    }
    Ok(Signature { name: name.to_string(), params, ret })
}

/// Splits an operand list on top-level commas, respecting string quotes.
fn split_operands(s: &str, line: usize) -> Result<Vec<String>, AsmError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut esc = false;
    for c in s.chars() {
        if in_str {
            cur.push(c);
            if esc {
                esc = false;
            } else if c == '\\' {
                esc = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                cur.push(c);
            }
            ',' => out.push(std::mem::take(&mut cur).trim().to_string()),
            c => cur.push(c),
        }
    }
    if in_str {
        return Err(syntax(line, "unterminated string"));
    }
    let last = cur.trim().to_string();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    if out.iter().any(String::is_empty) {
        return Err(syntax(line, "empty operand"));
    }
    Ok(out)
}

fn parse_reg(s: &str) -> Option<u8> {
    let n: u8 = s.strip_prefix('r')?.parse().ok()?;
    // reject forms like "r01"
    (n < NUM_REGS && format!("r{n}") == s).then_some(n)
}

fn unescape(body: &str, line: usize) -> Result<String, AsmError> {
    let mut out = String::new();
    let mut cs = body.chars();
    while let Some(c) = cs.next() {
        if c == '\\' {
            match cs.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('\\') => out.push('\\'),
                Some('"') => out.push('"'),
                _ => return Err(bad(line, "bad string escape")),
            }
        } else if c == '"' {
            return Err(bad(line, "unescaped quote in string"));
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn parse_operand(s: &str, line: usize) -> Result<Operand, AsmError> {
    if let Some(r) = parse_reg(s) {
        return Ok(Operand::Reg(r));
    }
    if let Some(num) = s.strip_prefix('#') {
        if let Ok(v) = num.parse::<i64>() {
            return Ok(Operand::Imm(v));
        }
        if num.contains(['.', 'e', 'N', 'i']) {
            if let Ok(v) = num.parse::<f64>() {
                return Ok(Operand::FImm(v));
            }
        }
        return Err(bad(line, format!("bad immediate `{s}`")));
    }
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        return Ok(Operand::Str(unescape(&s[1..s.len() - 1], line)?));
    }
    if let Some(inner) = s.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
        let (base, off) = inner.split_once('+').ok_or_else(|| bad(line, format!("bad memory operand `{s}`")))?;
        let off_num = off.parse::<u32>().ok().filter(|k| k.to_string() == off);
        if base == "fp" {
            return off_num.map(Operand::Frame).ok_or_else(|| bad(line, format!("bad frame offset `{s}`")));
        }
        let b = parse_reg(base).ok_or_else(|| bad(line, format!("bad base register `{s}`")))?;
        if let Some(i) = parse_reg(off) {
            return Ok(Operand::MemRR(b, i));
        }
        return off_num.map(|k| Operand::MemRI(b, k)).ok_or_else(|| bad(line, format!("bad memory offset `{s}`")));
    }
    if is_ident(s) {
        return Ok(Operand::Label(s.to_string()));
    }
    Err(bad(line, format!("unrecognised operand `{s}`")))
}

#[derive(Clone, Copy, PartialEq)]
enum Shape {
    R,
    I,
    F,
    S,
    L,
    Fr,
    /// Any memory form, including frame slots.
    M,
    Const,
}

fn fits(shape: Shape, o: &Operand) -> bool {
    matches!(
        (shape, o),
        (Shape::R, Operand::Reg(_))
            | (Shape::I, Operand::Imm(_))
            | (Shape::F, Operand::FImm(_))
            | (Shape::S, Operand::Str(_))
            | (Shape::L, Operand::Label(_))
            | (Shape::Fr, Operand::Frame(_))
            | (Shape::M, Operand::Frame(_) | Operand::MemRR(..) | Operand::MemRI(..))
            | (Shape::Const, Operand::Imm(_) | Operand::FImm(_) | Operand::Str(_))
    )
}

fn shapes(isa: IsaId, op: Opcode) -> Vec<Shape> {
    use Shape::*;
    match isa {
        IsaId::Reg => match op {
            Ldi => vec![R, I],
            Ldf => vec![R, F],
            Lds => vec![R, S],
            Ld => vec![R, M],
            St => vec![M, R],
            Alloc => vec![R, I],
            Jmp | Call => vec![L],
            Beq | Bne => vec![R, L],
            Ret | Nop => vec![],
            o if o.is_binary() => vec![R, R, R],
            _ => vec![R, R],
        },
        IsaId::Stk => match op {
            Push => vec![Const],
            Load | Store => vec![Fr],
            Alloc => vec![I],
            Jmp | Beq | Bne => vec![L],
            Call => vec![L, I],
            _ => vec![],
        },
    }
}

/// Parses the frozen text syntax. Errors carry 1-based line numbers.
pub fn parse_asm(text: &str) -> Result<AsmProgram, AsmError> {
    let mut isa = None;
    let mut sig = None;
    let mut instrs: Vec<Instr> = Vec::new();
    let mut lines_of: Vec<usize> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix(".isa") {
            isa = Some(match rest.trim() {
                "reg" => IsaId::Reg,
                "stk" => IsaId::Stk,
                other => return Err(syntax(line, format!("unknown isa `{other}`"))),
            });
            continue;
        }
        if let Some(rest) = s.strip_prefix(".sig") {
            sig = Some(parse_sig(rest.trim(), line)?);
            continue;
        }
        let Some(isa) = isa else {
            return Err(syntax(line, "instruction before `.isa` header"));
        };
        if sig.is_none() {
            return Err(syntax(line, "instruction before `.sig` header"));
        }
        let (label, body) = match s.split_once(':') {
            Some((l, b)) if is_ident(l.trim()) && !l.contains('"') => (Some(l.trim().to_string()), b.trim()),
            _ => (None, s),
        };
        let (mn, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        if mn.is_empty() {
            return Err(syntax(line, "label without instruction"));
        }
        let op = Opcode::from_mnemonic(mn)
            .filter(|o| o.available_on(isa))
            .ok_or_else(|| AsmError::UnknownOpcode { line, op: mn.to_string() })?;
        let args = split_operands(rest.trim(), line)?
            .iter()
            .map(|a| parse_operand(a, line))
            .collect::<Result<Vec<_>, _>>()?;
        let want = shapes(isa, op);
        if want.len() != args.len() || !want.iter().zip(&args).all(|(s, a)| fits(*s, a)) {
            return Err(bad(line, format!("wrong operands for `{mn}`")));
        }
        instrs.push(Instr { label, op, args });
        lines_of.push(line);
    }
    let isa = isa.ok_or_else(|| syntax(1, "missing `.isa` header"))?;
    let sig = sig.ok_or_else(|| syntax(1, "missing `.sig` header"))?;
    let prog = AsmProgram { isa, sig, instrs };
    validate(&prog, &lines_of)?;
    Ok(prog)
}

/// Label uniqueness, branch targets and the entry label.
fn validate(prog: &AsmProgram, lines_of: &[usize]) -> Result<(), AsmError> {
    let mut seen = HashSet::new();
    for (i, ins) in prog.instrs.iter().enumerate() {
        if let Some(l) = &ins.label {
            if !seen.insert(l.as_str()) {
                return Err(syntax(lines_of[i], format!("duplicate label `{l}`")));
            }
        }
    }
    match prog.instrs.first() {
        Some(ins) if ins.label.as_deref() == Some(prog.entry()) => {}
        _ => return Err(syntax(lines_of.first().copied().unwrap_or(1), "first instruction must carry the entry label")),
    }
    for (i, ins) in prog.instrs.iter().enumerate() {
        if ins.op.is_branch() {
            if let Some(Operand::Label(t)) = ins.args.last() {
                if !seen.contains(t.as_str()) {
                    return Err(bad(lines_of[i], format!("branch to undefined label `{t}`")));
                }
            }
        }
    }
    Ok(())
}

impl fmt::Display for IsaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IsaId::Reg => "reg",
            IsaId::Stk => "stk",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(isa: IsaId, body: &str) -> String {
        format!(".isa {isa}\n.sig int f(int, int *)\n{body}")
    }

    #[test]
    fn instruction_syntax_snapshot() {
        assert_eq!(Instr::new(Ldi, vec![Operand::Reg(0), Operand::Imm(5)]).to_string(), "ldi r0, #5");
        let mut b = Instr::new(Beq, vec![Operand::Reg(0), Operand::Label("L2".into())]);
        b.label = Some("L1".into());
        assert_eq!(b.to_string(), "L1: beq r0, L2");
        let st = Instr::new(St, vec![Operand::MemRR(1, 2), Operand::Reg(3)]);
        assert_eq!(st.to_string(), "st [r1+r2], r3");
    }

    #[test]
    fn round_trip() {
        let text = prog(
            IsaId::Reg,
            "f: ldi r0, #5\nL1: beq r0, L2\nldf r2, #-0.5\nlds r3, \"a, \\\"b\\\"\"\nst [fp+3], r2\nld r4, [r1+r0]\nL2: ld r4, [r1+2]\nret\n",
        );
        let p = parse_asm(&text).unwrap();
        assert_eq!(emit_asm(&p), text);
        assert_eq!(parse_asm(&emit_asm(&p)).unwrap(), p);
        assert_eq!(p.instrs[3].args[1], Operand::Str("a, \"b\"".into()));
    }

    #[test]
    fn stack_round_trip() {
        let text = ".isa stk\n.sig double g(double)\ng: load [fp+0]\npush #1.0e300\nfadd\nL1: bne L1\ncall h, #2\nret\n";
        let p = parse_asm(text).unwrap();
        assert_eq!(parse_asm(&emit_asm(&p)).unwrap(), p);
        assert_eq!(p.sig.to_string(), "double g(double)");
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_asm(&prog(IsaId::Reg, "f: bogus r0\n")), Err(AsmError::UnknownOpcode { line: 3, .. })));
        assert!(matches!(parse_asm(&prog(IsaId::Reg, "f: jmp L9\n")), Err(AsmError::BadOperand { line: 3, .. })));
        assert!(matches!(parse_asm(&prog(IsaId::Reg, "f: ldi r16, #1\n")), Err(AsmError::BadOperand { .. })));
        assert!(matches!(parse_asm(&prog(IsaId::Reg, "f: push #1\n")), Err(AsmError::UnknownOpcode { .. })));
        assert!(matches!(parse_asm(&prog(IsaId::Stk, "f: add r1\n")), Err(AsmError::BadOperand { .. })));
        assert!(matches!(parse_asm(&prog(IsaId::Reg, "g: ret\n")), Err(AsmError::Syntax { .. })));
        assert!(matches!(parse_asm(&prog(IsaId::Reg, "f: nop\nf: ret\n")), Err(AsmError::Syntax { line: 4, .. })));
        assert!(matches!(parse_asm("f: ret\n"), Err(AsmError::Syntax { .. })));
    }

    #[test]
    fn signatures() {
        let s = parse_sig("void f()", 1).unwrap();
        assert_eq!((s.params.len(), s.ret.clone()), (0, Ty::Void));
        let s = parse_sig("int *g(int *, double)", 1).unwrap();
        assert_eq!(s.ret, Ty::ptr(Ty::Int));
        assert_eq!(s.to_string(), "int * g(int *, double)");
        assert!(parse_sig("int f(void)", 1).is_err());
    }
}
