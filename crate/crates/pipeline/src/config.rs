//! Experiment configuration and its `key = value` text form.

use std::fmt::Write as _;

use declab_core::equiv::EquivConfig;
use declab_core::tokenizer::{DEFAULT_SEED_MULTIPLIER, DEFAULT_VOCAB_SIZE};
use declab_core::toyisa::{IsaId, OptLevel};
use declab_seq2seq::{BeamConfig, ModelConfig, TrainConfig};

use crate::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub seed_multiplier: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { vocab_size: DEFAULT_VOCAB_SIZE, seed_multiplier: DEFAULT_SEED_MULTIPLIER }
    }
}

/// Everything that determines a run. `isa` and `opt` list the
/// configurations to cover; one model is trained per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Seeds function generation and the train/test split.
    pub seed: u64,
    /// Seeds model initialisation.
    pub model_seed: u64,
    pub n_functions: usize,
    /// Percentage of functions held out for testing.
    pub test_percent: usize,
    pub isa: Vec<IsaId>,
    pub opt: Vec<OptLevel>,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub equiv: EquivConfig,
    pub type_inference: bool,
    /// Also evaluate every model with type inference switched off.
    pub ablation: bool,
    /// Equal-width bins for the length analysis.
    pub n_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            model_seed: 0,
            n_functions: 5000,
            test_percent: 5,
            isa: IsaId::ALL.to_vec(),
            opt: OptLevel::ALL.to_vec(),
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            equiv: EquivConfig::default(),
            type_inference: true,
            ablation: true,
            n_bins: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
}

fn list<T: std::str::FromStr<Err = String>>(v: &str) -> Result<Vec<T>, String> {
    let out = v.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<Vec<T>, _>>()?;
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn targets(&self) -> Vec<(IsaId, OptLevel)> {
        self.isa.iter().flat_map(|&i| self.opt.iter().map(move |&o| (i, o))).collect()
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "model_seed" => self.model_seed = parse(key, v)?,
            "n_functions" => self.n_functions = parse(key, v)?,
            "test_percent" => self.test_percent = parse(key, v)?,
            "isa" => self.isa = list(v)?,
            "opt" => self.opt = list(v)?,
            "type_inference" => self.type_inference = parse(key, v)?,
            "ablation" => self.ablation = parse(key, v)?,
            "n_bins" => self.n_bins = parse(key, v)?,
            "tokenizer.vocab_size" => self.tokenizer.vocab_size = parse(key, v)?,
            "tokenizer.seed_multiplier" => self.tokenizer.seed_multiplier = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "train.warmup_steps" => self.train.warmup_steps = parse(key, v)?,
            "train.max_steps" => self.train.max_steps = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "beam.k" => self.beam.k = parse(key, v)?,
            "beam.max_decode_len" => self.beam.max_decode_len = parse(key, v)?,
            "equiv.n_tests" => self.equiv.n_tests = parse(key, v)?,
            "equiv.input_seed" => self.equiv.input_seed = parse(key, v)?,
            "equiv.int_lo" => self.equiv.int_range.0 = parse(key, v)?,
            "equiv.int_hi" => self.equiv.int_range.1 = parse(key, v)?,
            "equiv.buffer_len" => self.equiv.buffer_len = parse(key, v)?,
            "equiv.step_limit" => self.equiv.step_limit = parse(key, v)?,
            k if k.starts_with("model.") => self.model.set(&k[6..], v).map_err(|e| e.to_string())?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Reads `key = value` lines on top of the defaults; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<(), PipelineError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| PipelineError::Config { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |msg: &str| Err(PipelineError::Config { line: 0, msg: msg.to_string() });
        if self.n_functions == 0 {
            return err("n_functions must be at least 1");
        }
        if !(1..100).contains(&self.test_percent) {
            return err("test_percent must be in 1..100");
        }
        if self.train.batch_size == 0 || self.beam.k == 0 || self.n_bins == 0 {
            return err("batch_size, beam.k and n_bins must be positive");
        }
        if !(self.train.learning_rate >= 0.0) {
            return err("learning_rate must be non-negative");
        }
        self.model.validate().map_err(|e| PipelineError::Config { line: 0, msg: e.to_string() })?;
        self.equiv.validate().map_err(|e| PipelineError::Config { line: 0, msg: e.to_string() })?;
        Ok(())
    }

    /// Every setting, one per line, in a fixed order; `from_kv` reads it back.
    pub fn to_kv(&self) -> String {
        let names = |xs: Vec<String>| xs.join(",");
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "model_seed = {}", self.model_seed);
        let _ = writeln!(s, "n_functions = {}", self.n_functions);
        let _ = writeln!(s, "test_percent = {}", self.test_percent);
        let _ = writeln!(s, "isa = {}", names(self.isa.iter().map(|i| i.to_string()).collect()));
        let _ = writeln!(s, "opt = {}", names(self.opt.iter().map(|o| o.to_string()).collect()));
        let _ = writeln!(s, "type_inference = {}", self.type_inference);
        let _ = writeln!(s, "ablation = {}", self.ablation);
        let _ = writeln!(s, "n_bins = {}", self.n_bins);
        let _ = writeln!(s, "tokenizer.vocab_size = {}", self.tokenizer.vocab_size);
        let _ = writeln!(s, "tokenizer.seed_multiplier = {}", self.tokenizer.seed_multiplier);
        for line in self.model.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap_or((line, ""));
            let _ = writeln!(s, "model.{k} = {v}");
        }
        let t = &self.train;
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "train.beta1 = {}", t.beta1);
        let _ = writeln!(s, "train.beta2 = {}", t.beta2);
        let _ = writeln!(s, "train.eps = {}", t.eps);
        let _ = writeln!(s, "train.warmup_steps = {}", t.warmup_steps);
        let _ = writeln!(s, "train.max_steps = {}", t.max_steps);
        let _ = writeln!(s, "train.seed = {}", t.seed);
        let _ = writeln!(s, "beam.k = {}", self.beam.k);
        let _ = writeln!(s, "beam.max_decode_len = {}", self.beam.max_decode_len);
        let e = &self.equiv;
        let _ = writeln!(s, "equiv.n_tests = {}", e.n_tests);
        let _ = writeln!(s, "equiv.input_seed = {}", e.input_seed);
        let _ = writeln!(s, "equiv.int_lo = {}", e.int_range.0);
        let _ = writeln!(s, "equiv.int_hi = {}", e.int_range.1);
        let _ = writeln!(s, "equiv.buffer_len = {}", e.buffer_len);
        let _ = writeln!(s, "equiv.step_limit = {}", e.step_limit);
        s
    }

    /// The equivalence settings for one evaluation pass.
    pub fn equiv_for(&self, type_inference: bool) -> EquivConfig {
        EquivConfig { type_inference, ..self.equiv.clone() }
    }
}

impl std::fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_kv())
    }
}
