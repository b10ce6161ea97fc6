//! (assembler, C) pairs, their JSONL storage and the function-level split.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use declab_core::equiv::{gen_inputs, EquivConfig};
use declab_core::minic::{interpret, parse_function, pretty_print, print_function_only, Ast};
use declab_core::toyisa::{compile, emit_asm, parse_asm, run_vm, IsaId, OptLevel};

use crate::config::ExperimentConfig;
use crate::gen::{generate_functions, Category};
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Hash of the canonical C text.
    pub id: String,
    /// Canonical C, including any typedef/extern lines it needs.
    pub c_source: String,
    pub asm_text: String,
    pub isa: IsaId,
    pub opt: OptLevel,
    pub split: Split,
    pub category: Category,
}

impl DatasetEntry {
    pub fn ast(&self) -> Result<Ast, PipelineError> {
        parse_function(&self.c_source).map_err(|e| PipelineError::Data(format!("{}: {e}", self.id)))
    }

    /// What the model is trained to emit: the function without its prelude.
    pub fn target(&self) -> Result<String, PipelineError> {
        Ok(print_function_only(&self.ast()?))
    }
}

pub fn function_id(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates, compiles and splits. Entries are ordered by function, then by
/// (isa, opt) in configuration order.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Vec<DatasetEntry>, PipelineError> {
    let fns = generate_functions(cfg.seed, cfg.n_functions)?;
    let n_test = (cfg.n_functions * cfg.test_percent).div_ceil(100).min(cfg.n_functions.saturating_sub(1)).max(1);
    let mut order: Vec<usize> = (0..fns.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5e1f));
    let test: HashSet<usize> = order[..n_test.min(fns.len())].iter().copied().collect();
    let mut out = Vec::with_capacity(fns.len() * cfg.targets().len());
    for (i, ast) in fns.iter().enumerate() {
        let c_source = pretty_print(ast);
        let id = function_id(&c_source);
        let split = if test.contains(&i) { Split::Test } else { Split::Train };
        for (isa, opt) in cfg.targets() {
            let prog = compile(ast, isa, opt).map_err(|e| PipelineError::Data(format!("{id}: {e}")))?;
            out.push(DatasetEntry {
                id: id.clone(),
                c_source: c_source.clone(),
                asm_text: emit_asm(&prog),
                isa,
                opt,
                split,
                category: Category::of(ast),
            });
        }
    }
    Ok(out)
}

/// Number of canonical C texts that occur in both splits.
pub fn leakage(entries: &[DatasetEntry]) -> usize {
    let mut splits: HashMap<&str, HashSet<Split>> = HashMap::new();
    for e in entries {
        splits.entry(e.c_source.as_str()).or_default().insert(e.split);
    }
    splits.values().filter(|s| s.len() > 1).count()
}

/// Re-parses the stored assembler and checks it still behaves like the C
/// source on the harness inputs.
pub fn revalidate(e: &DatasetEntry, cfg: &EquivConfig) -> Result<(), String> {
    let ast = parse_function(&e.c_source).map_err(|x| x.to_string())?;
    let prog = parse_asm(&e.asm_text).map_err(|x| x.to_string())?;
    if emit_asm(&compile(&ast, e.isa, e.opt).map_err(|x| x.to_string())?) != e.asm_text {
        return Err("assembler text differs from a fresh compile".into());
    }
    for (i, input) in gen_inputs(&ast.signature(), cfg).iter().enumerate() {
        let want = interpret(&ast, input, cfg.step_limit);
        let got = run_vm(&prog, input, cfg.step_limit);
        if !want.equivalent(&got) {
            return Err(format!("case {i}: interpreter {want:?}, vm {got:?}"));
        }
    }
    Ok(())
}

pub fn write_jsonl(w: &mut impl Write, entries: &[DatasetEntry]) -> Result<(), PipelineError> {
    for e in entries {
        serde_json::to_writer(&mut *w, e).map_err(|x| PipelineError::Data(x.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<DatasetEntry>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|x| PipelineError::Data(format!("line {}: {x}", i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig { n_functions: 120, test_percent: 10, ..Default::default() }
    }

    #[test]
    fn one_entry_per_function_and_target() {
        let d = build_dataset(&small()).unwrap();
        assert_eq!(d.len(), 480);
        for (isa, opt) in small().targets() {
            assert_eq!(d.iter().filter(|e| e.isa == isa && e.opt == opt).count(), 120);
        }
        let test_fns: HashSet<&str> = d.iter().filter(|e| e.split == Split::Test).map(|e| e.id.as_str()).collect();
        assert_eq!(test_fns.len(), 12);
        assert_eq!(leakage(&d), 0);
    }

    #[test]
    fn entries_revalidate_and_round_trip() {
        let d = build_dataset(&small()).unwrap();
        for e in &d {
            revalidate(e, &EquivConfig::default()).unwrap_or_else(|m| panic!("{}: {m}", e.id));
        }
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &d).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), d);
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), d.len());
    }

    #[test]
    fn leakage_is_detected() {
        let mut d = build_dataset(&small()).unwrap();
        let i = d.iter().position(|e| e.split == Split::Test).unwrap();
        d[i].split = Split::Train;
        assert_eq!(leakage(&d), 1);
    }

    #[test]
    fn targets_drop_the_prelude() {
        let d = build_dataset(&ExperimentConfig { n_functions: 400, ..small() }).unwrap();
        let e = d.iter().find(|e| e.c_source.starts_with("typedef")).expect("some aliased function");
        let t = e.target().unwrap();
        assert!(!t.contains("typedef"));
        assert!(e.c_source.ends_with(&t));
    }
}
