//! Random mini-C functions: short on average, bounded loops, and now and then
//! an undeclared-looking typedef alias or extern call for type completion to
//! recover.
//!
//! Generation works on source text; every candidate is parsed and type
//! checked by the real front end, run once on the zero input, and kept only
//! if it is new in canonical form.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use declab_core::equiv::{gen_inputs, io_equivalent, EquivConfig};
use declab_core::exec::DEFAULT_STEP_LIMIT;
use declab_core::minic::{interpret, parse_function, pretty_print, print_function_only, Ast};
use declab_core::toyisa::{compile, IsaId, OptLevel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("generated only {got} unique valid functions of {wanted} within the attempt budget")]
    GenerationBudgetExceeded { wanted: usize, got: usize },
    #[error("n must be at least 1")]
    Empty,
}

/// Coarse program type, used for the per-category accuracy breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Straight-line scalar code.
    Arith,
    /// Reads or writes through pointer parameters, no loops.
    Pointer,
    /// Contains a loop.
    Loop,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Arith, Category::Pointer, Category::Loop];

    pub fn name(self) -> &'static str {
        match self {
            Category::Arith => "arith",
            Category::Pointer => "pointer",
            Category::Loop => "loop",
        }
    }

    pub fn of(ast: &Ast) -> Category {
        if !ast.is_straight_line() {
            Category::Loop
        } else if ast.params.iter().any(|p| p.ty.is_ptr()) {
            Category::Pointer
        } else {
            Category::Arith
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Chance of stopping after each body statement.
    pub stop_prob: f64,
    pub max_stmts: usize,
    pub max_depth: usize,
    /// Loop trip counts are literals in `1..=max_trip`.
    pub max_trip: i32,
    pub alias_prob: f64,
    pub extern_prob: f64,
    /// Attempts allowed per requested function.
    pub attempts_per_fn: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            stop_prob: 0.45,
            max_stmts: 8,
            max_depth: 4,
            max_trip: 8,
            alias_prob: 0.1,
            extern_prob: 0.1,
            attempts_per_fn: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum B {
    Int,
    Float,
}

impl B {
    fn kw(self) -> &'static str {
        match self {
            B::Int => "int",
            B::Float => "double",
        }
    }
}

const FN_NAMES: [&str; 10] = ["f", "func", "calc", "compute", "update", "sum", "scale", "step", "mix", "apply"];
const INT_ALIASES: [&str; 3] = ["num", "word", "count"];
const FLOAT_ALIASES: [&str; 2] = ["real", "value"];
const EXTERN_NAMES: [&str; 3] = ["g", "ext", "helper"];
const SCALAR_NAMES: [&str; 4] = ["a", "b", "c", "d"];
const PTR_NAMES: [&str; 2] = ["p", "q"];
const LOCAL_NAMES: [&str; 4] = ["x", "y", "z", "t"];
const FLOAT_LITS: [&str; 7] = ["0.5", "1.5", "2.0", "2.5", "3.0", "0.25", "10.0"];

struct Var {
    name: String,
    ty: B,
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    cfg: &'r GenConfig,
    scalars: Vec<Var>,
    ptrs: Vec<Var>,
    locals: Vec<Var>,
    /// Loop counters in scope; readable, never assigned.
    counters: Vec<String>,
    alias: Option<(String, B)>,
    ext: Option<(String, Vec<B>, B)>,
    used_alias: bool,
    used_ext: bool,
}

impl Builder<'_> {
    fn spell(&mut self, t: B) -> String {
        match &self.alias {
            Some((n, at)) if *at == t && self.rng.gen_bool(0.7) => {
                self.used_alias = true;
                n.clone()
            }
            _ => t.kw().to_string(),
        }
    }

    fn int_lit(&mut self) -> String {
        if self.rng.gen_bool(0.8) {
            self.rng.gen_range(0..10).to_string()
        } else {
            self.rng.gen_range(10..100).to_string()
        }
    }

    fn leaf(&mut self, t: B) -> String {
        let mut opts: Vec<String> = Vec::new();
        for v in self.scalars.iter().chain(&self.locals).filter(|v| v.ty == t) {
            opts.push(v.name.clone());
        }
        if t == B::Int {
            opts.extend(self.counters.iter().cloned());
        }
        let ptrs: Vec<String> = self.ptrs.iter().filter(|v| v.ty == t).map(|v| v.name.clone()).collect();
        if !ptrs.is_empty() && self.rng.gen_bool(0.5) {
            let p = ptrs.choose(self.rng).unwrap().clone();
            let idx = self.index();
            return format!("{p}[{idx}]");
        }
        if !opts.is_empty() && self.rng.gen_bool(0.7) {
            return opts.choose(self.rng).unwrap().clone();
        }
        match t {
            B::Int => self.int_lit(),
            B::Float => FLOAT_LITS.choose(self.rng).unwrap().to_string(),
        }
    }

    /// An in-bounds index for the 8-element buffers the harness passes.
    fn index(&mut self) -> String {
        if !self.counters.is_empty() && self.rng.gen_bool(0.6) {
            return self.counters.choose(self.rng).unwrap().clone();
        }
        self.rng.gen_range(0..self.cfg.max_trip.min(8)).to_string()
    }

    fn expr(&mut self, t: B, depth: usize) -> String {
        if depth >= self.cfg.max_depth || self.rng.gen_bool(0.35 + 0.15 * depth as f64) {
            return self.leaf(t);
        }
        let roll: f64 = self.rng.gen();
        if let Some((_, _, r)) = &self.ext {
            if *r == t && roll < 0.25 {
                return self.call(depth);
            }
        }
        if roll < 0.08 {
            let other = if t == B::Int { B::Float } else { B::Int };
            let inner = self.expr(other, depth + 1);
            return format!("({}) {}", t.kw(), paren(&inner));
        }
        if roll < 0.14 {
            return format!("-{}", paren(&self.expr(t, depth + 1)));
        }
        let op = match (t, self.rng.gen_range(0..10)) {
            (_, 0..=3) => "+",
            (_, 4..=5) => "-",
            (_, 6..=7) => "*",
            (B::Int, 8) => "%",
            _ => "/",
        };
        let lhs = self.expr(t, depth + 1);
        let rhs = if op == "/" || op == "%" {
            match t {
                B::Int => self.rng.gen_range(2..10).to_string(),
                B::Float => FLOAT_LITS[1..].choose(self.rng).unwrap().to_string(),
            }
        } else {
            self.expr(t, depth + 1)
        };
        format!("{} {op} {}", paren(&lhs), paren(&rhs))
    }

    fn cond(&mut self) -> String {
        let t = if self.rng.gen_bool(0.8) { B::Int } else { B::Float };
        let op = ["<", "<=", ">", ">=", "==", "!="].choose(self.rng).unwrap();
        let a = self.expr(t, 2);
        let b = self.expr(t, 3);
        let c = format!("{a} {op} {b}");
        if self.rng.gen_bool(0.15) {
            let d = self.cond();
            let j = if self.rng.gen_bool(0.5) { "&&" } else { "||" };
            return format!("({c}) {j} ({d})");
        }
        c
    }

    /// Assignment to a local, a scalar parameter or a buffer element.
    fn assign(&mut self, depth: usize) -> Option<String> {
        let mut targets: Vec<(String, B)> = self.locals.iter().map(|v| (v.name.clone(), v.ty)).collect();
        if targets.is_empty() || self.rng.gen_bool(0.3) {
            targets.extend(self.scalars.iter().map(|v| (v.name.clone(), v.ty)));
        }
        if !self.ptrs.is_empty() && (targets.is_empty() || self.rng.gen_bool(0.5)) {
            let (p, t) = {
                let v = self.ptrs.choose(self.rng).unwrap();
                (v.name.clone(), v.ty)
            };
            let idx = self.index();
            let e = self.expr(t, depth);
            return Some(format!("{p}[{idx}] = {e};"));
        }
        let (name, t) = targets.choose(self.rng)?.clone();
        let e = self.expr(t, depth);
        Some(format!("{name} = {e};"))
    }

    fn simple(&mut self) -> String {
        match self.assign(1) {
            Some(s) => s,
            None => self.decl(),
        }
    }

    fn decl(&mut self) -> String {
        let name = LOCAL_NAMES[self.locals.len()].to_string();
        let t = if self.rng.gen_bool(0.75) { B::Int } else { B::Float };
        let e = self.expr(t, 1);
        let ty = self.spell(t);
        self.locals.push(Var { name: name.clone(), ty: t });
        format!("{ty} {name} = {e};")
    }

    fn block(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.simple()).collect()
    }

    fn has_targets(&self) -> bool {
        !(self.locals.is_empty() && self.scalars.is_empty() && self.ptrs.is_empty())
    }

    fn stmt(&mut self, allow_loop: bool) -> Vec<String> {
        let roll: f64 = self.rng.gen();
        if (roll < 0.35 || !self.has_targets()) && self.locals.len() < LOCAL_NAMES.len() {
            return vec![self.decl()];
        }
        if roll < 0.55 {
            let c = self.cond();
            let n = self.rng.gen_range(1..=2);
            let mut out = vec![format!("if ({c}) {{")];
            out.extend(self.block(n).into_iter().map(indent));
            if self.rng.gen_bool(0.4) {
                out.push("} else {".into());
                out.extend(self.block(1).into_iter().map(indent));
            }
            out.push("}".into());
            return out;
        }
        if roll < 0.72 && allow_loop {
            let k = self.rng.gen_range(1..=self.cfg.max_trip);
            self.counters.push("i".into());
            let n = self.rng.gen_range(1..=2);
            let mut out = vec![format!("for (int i = 0; i < {k}; i = i + 1) {{")];
            out.extend(self.block(n).into_iter().map(indent));
            out.push("}".into());
            self.counters.pop();
            return out;
        }
        vec![self.simple()]
    }

    fn call(&mut self, depth: usize) -> String {
        let (name, ps, _) = self.ext.clone().expect("extern chosen");
        self.used_ext = true;
        let args: Vec<String> = ps.iter().map(|&p| self.expr(p, depth + 2)).collect();
        format!("{name}({})", args.join(", "))
    }

    fn function(&mut self) -> String {
        let cfg = self.cfg;
        let mut n_scalar = 0;
        while n_scalar < SCALAR_NAMES.len() && self.rng.gen_bool(if n_scalar == 0 { 0.85 } else { 0.45 }) {
            n_scalar += 1;
        }
        let n_ptr = if self.rng.gen_bool(0.3) { 1 + self.rng.gen_bool(0.25) as usize } else { 0 };
        for name in &SCALAR_NAMES[..n_scalar] {
            let ty = if self.rng.gen_bool(0.8) { B::Int } else { B::Float };
            self.scalars.push(Var { name: name.to_string(), ty });
        }
        for name in &PTR_NAMES[..n_ptr] {
            let ty = if self.rng.gen_bool(0.8) { B::Int } else { B::Float };
            self.ptrs.push(Var { name: name.to_string(), ty });
        }
        let ret = if n_ptr > 0 && self.rng.gen_bool(0.2) {
            None
        } else if self.rng.gen_bool(0.8) {
            Some(B::Int)
        } else {
            Some(B::Float)
        };
        // the declared-elsewhere names share the return type (or the first
        // buffer's element type) so that one forced use is always possible
        let anchor = ret.unwrap_or_else(|| self.ptrs[0].ty);
        if self.rng.gen_bool(cfg.alias_prob) {
            let n = match anchor {
                B::Int => INT_ALIASES.choose(self.rng).unwrap(),
                B::Float => FLOAT_ALIASES.choose(self.rng).unwrap(),
            };
            self.alias = Some((n.to_string(), anchor));
        }
        if self.rng.gen_bool(cfg.extern_prob) {
            let n = EXTERN_NAMES.choose(self.rng).unwrap().to_string();
            let k = self.rng.gen_range(1..=2);
            let ps = (0..k).map(|_| if self.rng.gen_bool(0.8) { B::Int } else { B::Float }).collect();
            self.ext = Some((n, ps, anchor));
        }
        let mut body = Vec::new();
        let mut loops = 0;
        let mut count = 0;
        while count < cfg.max_stmts && !self.rng.gen_bool(cfg.stop_prob) {
            let s = self.stmt(loops == 0);
            loops += s[0].starts_with("for") as usize;
            body.extend(s);
            count += 1;
        }
        let force_call = self.ext.is_some() && !self.used_ext;
        let ret_ty = match ret {
            Some(t) => {
                let e = if force_call { self.call(1) } else { self.expr(t, 0) };
                body.push(format!("return {e};"));
                if self.alias.is_some() && !self.used_alias {
                    self.used_alias = true;
                    self.alias.as_ref().unwrap().0.clone()
                } else {
                    self.spell(t)
                }
            }
            None => {
                if force_call {
                    let c = self.call(1);
                    let idx = self.index();
                    body.push(format!("{}[{idx}] = {c};", self.ptrs[0].name));
                } else if body.is_empty() {
                    let s = self.simple();
                    body.push(s);
                }
                "void".into()
            }
        };
        let mut params: Vec<String> = Vec::new();
        let scalars: Vec<(String, B)> = self.scalars.iter().map(|v| (v.name.clone(), v.ty)).collect();
        for (n, t) in scalars {
            let ty = self.spell(t);
            params.push(format!("{ty} {n}"));
        }
        let ptrs: Vec<(String, B)> = self.ptrs.iter().map(|v| (v.name.clone(), v.ty)).collect();
        for (i, (n, t)) in ptrs.into_iter().enumerate() {
            let ty = if i == 0 && self.alias.is_some() && !self.used_alias {
                self.used_alias = true;
                self.alias.as_ref().unwrap().0.clone()
            } else {
                t.kw().to_string()
            };
            params.push(format!("{ty} *{n}"));
        }
        let name = FN_NAMES.choose(self.rng).unwrap();
        let mut src = String::new();
        if let (true, Some((n, t))) = (self.used_alias, &self.alias) {
            src.push_str(&format!("typedef {} {n};\n", t.kw()));
        }
        if let (true, Some((n, ps, r))) = (self.used_ext, &self.ext) {
            let ps: Vec<&str> = ps.iter().map(|p| p.kw()).collect();
            src.push_str(&format!("extern {} {n}({});\n", r.kw(), ps.join(", ")));
        }
        src.push_str(&format!("{ret_ty} {name}({}) {{\n", params.join(", ")));
        for line in body {
            src.push_str("  ");
            src.push_str(&line);
            src.push('\n');
        }
        src.push_str("}\n");
        src
    }
}

fn indent(s: String) -> String {
    format!("  {s}")
}

fn paren(e: &str) -> String {
    if e.chars().all(|c| c.is_ascii_alphanumeric() || c == '.') {
        e.to_string()
    } else {
        format!("({e})")
    }
}

/// One candidate function's source text; may fail to type check.
pub fn candidate(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> String {
    Builder {
        rng,
        cfg,
        scalars: Vec::new(),
        ptrs: Vec::new(),
        locals: Vec::new(),
        counters: Vec::new(),
        alias: None,
        ext: None,
        used_alias: false,
        used_ext: false,
    }
    .function()
}

/// Parses, checks and runs a candidate on the zero input. A function with a
/// prelude must also survive losing it: type completion of the bare function
/// has to give back something IO-equivalent, otherwise no decompiler output
/// could ever pass (e.g. a `double` alias used only by an identity return).
fn accept(src: &str) -> Option<Ast> {
    let ast = parse_function(src).ok()?;
    let zero = gen_inputs(&ast.signature(), &EquivConfig { n_tests: 1, ..Default::default() }).remove(0);
    if interpret(&ast, &zero, DEFAULT_STEP_LIMIT).is_step_limit() {
        return None;
    }
    if !(ast.typedefs.is_empty() && ast.externs.is_empty()) {
        let prog = compile(&ast, IsaId::Reg, OptLevel::O0).ok()?;
        if !io_equivalent(&prog, &print_function_only(&ast), &EquivConfig::default()).is_pass() {
            return None;
        }
    }
    Some(ast)
}

pub fn generate_functions(seed: u64, n: usize) -> Result<Vec<Ast>, GenError> {
    generate_with(&GenConfig::default(), seed, n)
}

/// `n` distinct functions (by canonical text), deterministic in `seed`.
pub fn generate_with(cfg: &GenConfig, seed: u64, n: usize) -> Result<Vec<Ast>, GenError> {
    if n == 0 {
        return Err(GenError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n.saturating_mul(cfg.attempts_per_fn) {
        let src = candidate(&mut rng, cfg);
        if let Some(ast) = accept(&src) {
            if seen.insert(pretty_print(&ast)) {
                out.push(ast);
                if out.len() == n {
                    return Ok(out);
                }
            }
        }
    }
    Err(GenError::GenerationBudgetExceeded { wanted: n, got: out.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_mostly_type_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GenConfig::default();
        let mut ok = 0;
        for _ in 0..300 {
            let src = candidate(&mut rng, &cfg);
            match parse_function(&src) {
                Ok(_) => ok += 1,
                Err(e) => panic!("{e}\n{src}"),
            }
        }
        assert_eq!(ok, 300);
    }

    #[test]
    fn generation_is_deterministic_and_unique() {
        let a = generate_functions(3, 200).unwrap();
        assert_eq!(a, generate_functions(3, 200).unwrap());
        let texts: HashSet<String> = a.iter().map(pretty_print).collect();
        assert_eq!(texts.len(), 200);
        assert_ne!(a, generate_functions(4, 200).unwrap());
    }

    #[test]
    fn declarations_appear_at_roughly_the_configured_rate() {
        let a = generate_functions(5, 1000).unwrap();
        let aliased = a.iter().filter(|f| !f.typedefs.is_empty()).count();
        let ext = a.iter().filter(|f| !f.externs.is_empty()).count();
        assert!((60..=140).contains(&aliased), "{aliased}");
        assert!((60..=140).contains(&ext), "{ext}");
        for c in Category::ALL {
            assert!(a.iter().any(|f| Category::of(f) == c), "{c:?}");
        }
    }

    #[test]
    fn impossible_budget_is_reported() {
        let cfg = GenConfig { attempts_per_fn: 1, stop_prob: 1.0, alias_prob: 0.0, extern_prob: 0.0, ..Default::default() };
        // with no body statements the space of distinct functions is tiny
        let e = generate_with(&cfg, 0, 5000).unwrap_err();
        assert!(matches!(e, GenError::GenerationBudgetExceeded { wanted: 5000, .. }));
    }
}
