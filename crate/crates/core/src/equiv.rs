//! IO equivalence on a finite, seeded input set: the original program and a
//! recompiled hypothesis must agree on every case.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Inputs, Outcome, Scalar, DEFAULT_STEP_LIMIT};
use crate::minic::{parse_function, Signature, Ty};
use crate::toyisa::{compile, run_vm, AsmProgram, OptLevel};
use crate::typeinfer::{complete_program, Completion, TypeInferError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivConfig {
    pub n_tests: usize,
    pub input_seed: u64,
    pub int_range: (i64, i64),
    pub buffer_len: usize,
    pub step_limit: u64,
    /// Complete the hypothesis with inferred declarations before compiling.
    pub type_inference: bool,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            n_tests: 10,
            input_seed: 0,
            int_range: (-100, 100),
            buffer_len: 8,
            step_limit: DEFAULT_STEP_LIMIT,
            type_inference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("n_tests must be at least 1")]
    NoTests,
    #[error("int_range must satisfy lo < hi")]
    EmptyRange,
    #[error("buffer_len must be in 1..=64")]
    BufferLen,
}

impl EquivConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_tests == 0 {
            return Err(ConfigError::NoTests);
        }
        if self.int_range.0 >= self.int_range.1 {
            return Err(ConfigError::EmptyRange);
        }
        if !(1..=crate::exec::MAX_BUFFER_LEN).contains(&self.buffer_len) {
            return Err(ConfigError::BufferLen);
        }
        Ok(())
    }
}

/// Where a hypothesis stopped before it could be run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Parse,
    TypeInfer,
    Compile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail { index: usize, expected: Outcome, actual: Outcome },
    CompileError(Stage),
    /// The hypothesis hit the step limit; counts as a failure.
    NonTermination,
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    /// Whether the hypothesis got as far as running.
    pub fn compiled(&self) -> bool {
        !matches!(self, Verdict::CompileError(_))
    }
}

fn draw(rng: &mut ChaCha8Rng, ty: &Ty, cfg: &EquivConfig) -> Scalar {
    let (lo, hi) = cfg.int_range;
    match ty.resolve() {
        Ty::Float => Scalar::Float(rng.gen_range(lo as f64..hi as f64)),
        _ => Scalar::Int(rng.gen_range(lo..=hi)),
    }
}

/// `n_tests` input vectors for `sig`; case 0 is all zeros.
pub fn gen_inputs(sig: &Signature, cfg: &EquivConfig) -> Vec<Inputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.input_seed);
    let elems: Vec<Ty> = sig.pointer_params().filter_map(Ty::elem).collect();
    let zero = Inputs {
        scalars: sig.scalar_params().map(Scalar::zero_of).collect(),
        buffers: elems.iter().map(|t| vec![Scalar::zero_of(t); cfg.buffer_len]).collect(),
    };
    let mut out = vec![zero];
    while out.len() < cfg.n_tests {
        let scalars = sig.scalar_params().map(|t| draw(&mut rng, t, cfg)).collect();
        let buffers = elems.iter().map(|t| (0..cfg.buffer_len).map(|_| draw(&mut rng, t, cfg)).collect()).collect();
        out.push(Inputs { scalars, buffers });
    }
    out.truncate(cfg.n_tests);
    out
}

/// Front half of the check: completion, type checking and recompilation at
/// O0 on the original's ISA.
pub fn recompile(original: &AsmProgram, hypothesis: &str, cfg: &EquivConfig) -> Result<AsmProgram, Stage> {
    let source = if cfg.type_inference {
        match complete_program(hypothesis) {
            Completion::Completed(s) => s,
            Completion::Unfixable(TypeInferError::Parse(_) | TypeInferError::Syntax { .. }) => return Err(Stage::Parse),
            Completion::Unfixable(_) => return Err(Stage::TypeInfer),
        }
    } else {
        hypothesis.to_string()
    };
    let ast = parse_function(&source).map_err(|_| Stage::Parse)?;
    compile(&ast, original.isa, OptLevel::O0).map_err(|_| Stage::Compile)
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    case: usize,
    input: &'a Inputs,
    expected: &'a Outcome,
    actual: &'a Outcome,
}

/// Decides whether `hypothesis` behaves like `original` on the seeded inputs.
pub fn io_equivalent(original: &AsmProgram, hypothesis: &str, cfg: &EquivConfig) -> Verdict {
    io_equivalent_traced(original, hypothesis, cfg, None)
}

/// As `io_equivalent`, also writing one JSON line per executed case.
pub fn io_equivalent_traced(
    original: &AsmProgram,
    hypothesis: &str,
    cfg: &EquivConfig,
    mut trace: Option<&mut dyn Write>,
) -> Verdict {
    let recompiled = match recompile(original, hypothesis, cfg) {
        Ok(p) => p,
        Err(stage) => return Verdict::CompileError(stage),
    };
    for (index, input) in gen_inputs(&original.sig, cfg).iter().enumerate() {
        let expected = run_vm(original, input, cfg.step_limit);
        let actual = run_vm(&recompiled, input, cfg.step_limit);
        if let Some(w) = trace.as_deref_mut() {
            let rec = TraceRecord { case: index, input, expected: &expected, actual: &actual };
            // tracing is best effort
            let _ = serde_json::to_writer(&mut *w, &rec).and_then(|_| writeln!(w).map_err(serde_json::Error::io));
        }
        if actual.is_step_limit() {
            return Verdict::NonTermination;
        }
        if !expected.equivalent(&actual) {
            return Verdict::Fail { index, expected, actual };
        }
    }
    Verdict::Pass
}
