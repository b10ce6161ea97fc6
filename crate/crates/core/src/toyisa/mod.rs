//! Two toy instruction sets, a compiler from mini-C to both at two
//! optimization levels, and the virtual machine that runs them.

mod asm;
mod codegen;
mod opt;
mod vm;

pub use asm::{emit_asm, parse_asm, AsmProgram, Instr, Opcode, Operand, NUM_REGS};
pub use codegen::compile;
pub use opt::{optimize, MAX_UNROLL};
pub use vm::run_vm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// REG is a 16-register load/store machine; STK an operand-stack machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsaId {
    Reg,
    Stk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptLevel {
    O0,
    O2,
}

impl IsaId {
    pub const ALL: [IsaId; 2] = [IsaId::Reg, IsaId::Stk];
}

impl OptLevel {
    pub const ALL: [OptLevel; 2] = [OptLevel::O0, OptLevel::O2];
}

impl std::fmt::Display for OptLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptLevel::O0 => "O0",
            OptLevel::O2 => "O2",
        })
    }
}

impl std::str::FromStr for IsaId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "reg" => Ok(IsaId::Reg),
            "stk" => Ok(IsaId::Stk),
            _ => Err(format!("unknown isa `{s}` (expected reg or stk)")),
        }
    }
}

impl std::str::FromStr for OptLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "O0" => Ok(OptLevel::O0),
            "O2" => Ok(OptLevel::O2),
            _ => Err(format!("unknown optimization level `{s}` (expected O0 or O2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown opcode `{op}`")]
    UnknownOpcode { line: usize, op: String },
    #[error("line {line}: bad operand: {msg}")]
    BadOperand { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("unsupported feature: {0}")]
    Unsupported(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{Inputs, OutcomeKind, Scalar, DEFAULT_STEP_LIMIT};
    use crate::minic::{interpret, parse_function};

    fn build(src: &str, isa: IsaId, opt: OptLevel) -> AsmProgram {
        compile(&parse_function(src).unwrap(), isa, opt).unwrap()
    }

    #[test]
    fn folds_at_o2() {
        let p = build("int f(){return 2+3;}", IsaId::Reg, OptLevel::O2);
        assert_eq!(emit_asm(&p), ".isa reg\n.sig int f()\nf: ldi r0, #5\nret\n");
        assert_eq!(p.count(Opcode::Add), 0);
    }

    #[test]
    fn naive_at_o0() {
        let p = build("int f(){return 2+3;}", IsaId::Reg, OptLevel::O0);
        assert_eq!(p.count(Opcode::Ldi), 2);
        assert_eq!(p.count(Opcode::Add), 1);
    }

    #[test]
    fn return_seven_everywhere() {
        for isa in IsaId::ALL {
            for opt in OptLevel::ALL {
                let p = build("int f(){return 7;}", isa, opt);
                let out = run_vm(&p, &Inputs::default(), DEFAULT_STEP_LIMIT);
                assert_eq!(out.kind, OutcomeKind::Returned(Some(Scalar::Int(7))), "{isa} {opt}");
            }
        }
    }

    #[test]
    fn text_is_deterministic_and_round_trips() {
        let src = "double g(double *p, int n){double s=0.0; int i; for(i=0;i<n;i=i+1){if(p[i]>0.5 && i!=2){s=s+p[i];}} return s;}";
        for isa in IsaId::ALL {
            for opt in OptLevel::ALL {
                let a = emit_asm(&build(src, isa, opt));
                assert_eq!(a, emit_asm(&build(src, isa, opt)));
                assert_eq!(emit_asm(&parse_asm(&a).unwrap()), a);
            }
        }
    }

    #[test]
    fn matches_interpreter_on_hand_cases() {
        let cases = [
            ("int f(int a, int b){ if (b == 0) { return -1; } return a / b + a % b; }", vec![Scalar::Int(17), Scalar::Int(5)]),
            ("int f(int a){ int x; int *p = &x; *p = a * 3; return x + a; }", vec![Scalar::Int(4)]),
            ("int f(int a){ int *p = &a; *p = *p + 1; return a; }", vec![Scalar::Int(4)]),
            ("double f(double x, int k){ int i; double acc = 1.0; for (i = 0; i < k; i = i + 1) { acc = acc * x; } return acc; }", vec![Scalar::Float(1.5), Scalar::Int(3)]),
            ("int f(double x){ return !x || x > 2.5; }", vec![Scalar::Float(0.0)]),
            ("int f(int a){ return a && (a - 1) || !a; }", vec![Scalar::Int(1)]),
            ("int f(int a){ int i; int s = 0; for (i = 3; i > 0; i = i - 1) { s = s * 10 + i + a; } return s; }", vec![Scalar::Int(2)]),
        ];
        for (src, scalars) in cases {
            let ast = parse_function(src).unwrap();
            let inputs = Inputs { scalars, buffers: vec![] };
            let want = interpret(&ast, &inputs, DEFAULT_STEP_LIMIT);
            for isa in IsaId::ALL {
                for opt in OptLevel::ALL {
                    let p = compile(&ast, isa, opt).unwrap();
                    let got = run_vm(&p, &inputs, DEFAULT_STEP_LIMIT);
                    assert!(got.equivalent(&want), "{src} {isa} {opt}: {got:?} vs {want:?}\n{}", emit_asm(&p));
                }
            }
        }
    }

    #[test]
    fn buffers_and_traps_agree() {
        let src = "extern int ext(int);\nvoid f(int *p, double *q, int n){ int i; for (i = 0; i < n; i = i + 1) { p[i] = p[i] * 2; q[0] = q[0] + p[i]; } if (n > 3) { ext(p[n]); } }";
        let ast = parse_function(src).unwrap();
        for n in [0, 2, 3, 4] {
            let inputs = Inputs {
                scalars: vec![Scalar::Int(n)],
                buffers: vec![vec![Scalar::Int(1), Scalar::Int(2), Scalar::Int(3)], vec![Scalar::Float(0.5)]],
            };
            let want = interpret(&ast, &inputs, DEFAULT_STEP_LIMIT);
            for isa in IsaId::ALL {
                for opt in OptLevel::ALL {
                    let p = compile(&ast, isa, opt).unwrap();
                    let got = run_vm(&p, &inputs, DEFAULT_STEP_LIMIT);
                    assert!(got.equivalent(&want), "n={n} {isa} {opt}: {got:?} vs {want:?}\n{}", emit_asm(&p));
                }
            }
        }
    }
}
