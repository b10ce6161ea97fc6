//! Tokenizer training, one model per (isa, opt), beam decoding of the test
//! split and IO-equivalence evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use declab_core::equiv::{io_equivalent, EquivConfig};
use declab_core::metrics::{edit_similarity, EvalRecord};
use declab_core::minic::extract_features;
use declab_core::tokenizer::{train_unigram, Vocab};
use declab_core::toyisa::{parse_asm, IsaId, OptLevel};
use declab_seq2seq::{beam_search, BeamConfig, Model, ModelConfig, Trainer, BOS, EOS};

use crate::config::ExperimentConfig;
use crate::dataset::{build_dataset, leakage, DatasetEntry, Split};
use crate::report;
use crate::PipelineError;

pub type Pair = (Vec<u32>, Vec<u32>);

/// Tokenizer corpus: every training-split C target and assembler text.
/// Test functions never contribute.
pub fn tokenizer_corpus(entries: &[DatasetEntry]) -> Result<Vec<String>, PipelineError> {
    let mut out = Vec::new();
    let mut last_id = "";
    for e in entries.iter().filter(|e| e.split == Split::Train) {
        if e.id != last_id {
            out.push(e.target()?);
            last_id = &e.id;
        }
        out.push(e.asm_text.clone());
    }
    Ok(out)
}

pub fn train_tokenizer(cfg: &ExperimentConfig, entries: &[DatasetEntry]) -> Result<Vocab, PipelineError> {
    let corpus = tokenizer_corpus(entries)?;
    Ok(train_unigram(&corpus, cfg.tokenizer.vocab_size, cfg.tokenizer.seed_multiplier)?)
}

/// The configured architecture with the vocabulary size taken from `vocab`.
pub fn model_config(cfg: &ExperimentConfig, vocab: &Vocab) -> ModelConfig {
    ModelConfig { vocab_size: vocab.n_ids(), ..cfg.model.clone() }
}

/// Encoded training pairs for one target; pairs whose source or target do
/// not fit the positional tables are skipped.
pub fn training_pairs(vocab: &Vocab, entries: &[DatasetEntry], isa: IsaId, opt: OptLevel, max_positions: usize) -> Result<Vec<Pair>, PipelineError> {
    let mut out = Vec::new();
    for e in entries.iter().filter(|e| e.split == Split::Train && e.isa == isa && e.opt == opt) {
        let src = vocab.encode_for_model(&e.asm_text, max_positions);
        let tgt = vocab.encode_for_model(&e.target()?, max_positions);
        if let (Some(s), Some(t)) = (src, tgt) {
            out.push((s, t));
        }
    }
    Ok(out)
}

/// Model seed for one target, so that the four models differ but each is
/// reproducible on its own.
pub fn model_seed(base: u64, isa: IsaId, opt: OptLevel) -> u64 {
    let i = IsaId::ALL.iter().position(|&x| x == isa).unwrap_or(0) as u64;
    let o = OptLevel::ALL.iter().position(|&x| x == opt).unwrap_or(0) as u64;
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i * 16 + o)
}

pub fn train_model(
    cfg: &ExperimentConfig,
    vocab: &Vocab,
    pairs: &[Pair],
    isa: IsaId,
    opt: OptLevel,
    mut log: impl FnMut(u64, f64),
) -> Result<Model, PipelineError> {
    let mcfg = model_config(cfg, vocab);
    if pairs.is_empty() {
        return Err(PipelineError::Data(format!("no training pair for {isa}/{opt} fits {} positions", mcfg.max_positions)));
    }
    let model = Model::init(mcfg, model_seed(cfg.model_seed, isa, opt))?;
    let mut trainer = Trainer::new(model, cfg.train.clone());
    trainer.run(pairs, &mut log)?;
    Ok(trainer.model)
}

/// BOS + tokens + EOS, keeping only the leading tokens of an over-long input.
pub fn encode_source(vocab: &Vocab, asm_text: &str, max_positions: usize) -> Vec<u32> {
    let mut ids = vocab.encode(asm_text);
    ids.truncate(max_positions.saturating_sub(2));
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(BOS);
    out.extend(ids);
    out.push(EOS);
    out
}

/// Assembler text in, C hypothesis out.
pub fn decompile(model: &Model, vocab: &Vocab, asm_text: &str, beam: &BeamConfig) -> Result<String, PipelineError> {
    let src = encode_source(vocab, asm_text, model.cfg.max_positions);
    let ids = beam_search(model, &src, beam)?;
    Ok(vocab.decode(&ids)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub isa: IsaId,
    pub opt: OptLevel,
    pub hypothesis: String,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Data(format!("thread pool: {e}")))
}

/// Decodes every test entry whose (isa, opt) has a model, in entry order.
pub fn decode_test(
    models: &[((IsaId, OptLevel), Model)],
    vocab: &Vocab,
    entries: &[DatasetEntry],
    beam: &BeamConfig,
    jobs: usize,
) -> Result<Vec<Hypothesis>, PipelineError> {
    let test: Vec<(&DatasetEntry, &Model)> = entries
        .iter()
        .filter(|e| e.split == Split::Test)
        .filter_map(|e| models.iter().find(|(t, _)| *t == (e.isa, e.opt)).map(|(_, m)| (e, m)))
        .collect();
    pool(jobs)?.install(|| {
        test.par_iter()
            .map(|(e, m)| {
                Ok(Hypothesis { id: e.id.clone(), isa: e.isa, opt: e.opt, hypothesis: decompile(m, vocab, &e.asm_text, beam)? })
            })
            .collect()
    })
}

/// One record per hypothesis. `entries` must contain the matching test entries.
pub fn evaluate(
    entries: &[DatasetEntry],
    hyps: &[Hypothesis],
    equiv: &EquivConfig,
    jobs: usize,
) -> Result<Vec<EvalRecord>, PipelineError> {
    let find = |h: &Hypothesis| {
        entries
            .iter()
            .find(|e| e.id == h.id && e.isa == h.isa && e.opt == h.opt)
            .ok_or_else(|| PipelineError::Data(format!("no entry for hypothesis {} {}/{}", h.id, h.isa, h.opt)))
    };
    let pairs: Vec<(&DatasetEntry, &Hypothesis)> = hyps.iter().map(|h| Ok((find(h)?, h))).collect::<Result<_, PipelineError>>()?;
    pool(jobs)?.install(|| pairs.par_iter().map(|(e, h)| evaluate_one(e, &h.hypothesis, equiv)).collect())
}

pub fn evaluate_one(e: &DatasetEntry, hypothesis: &str, equiv: &EquivConfig) -> Result<EvalRecord, PipelineError> {
    let ast = e.ast()?;
    let original = parse_asm(&e.asm_text).map_err(|x| PipelineError::Data(format!("{}: {x}", e.id)))?;
    let verdict = io_equivalent(&original, hypothesis, equiv);
    let f = extract_features(&ast, &e.asm_text);
    let reference = e.target()?;
    Ok(EvalRecord {
        id: e.id.clone(),
        isa: e.isa,
        opt: e.opt,
        compiles: verdict.compiled(),
        io_pass: verdict.is_pass(),
        edit_similarity: edit_similarity(hypothesis, &reference).unwrap_or(0.0),
        asm_length: f.asm_length,
        c_length: f.c_length,
        num_func_args: f.num_func_args,
        num_pointers: f.num_pointers,
    })
}

/// Records of one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub type_inference: bool,
    pub records: Vec<EvalRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub entries: Vec<DatasetEntry>,
    pub vocab: Vocab,
    pub models: Vec<((IsaId, OptLevel), Model)>,
    /// (isa, opt, step, loss) for every training step.
    pub train_log: Vec<(IsaId, OptLevel, u64, f64)>,
    pub n_pairs: Vec<((IsaId, OptLevel), usize)>,
    pub hypotheses: Vec<Hypothesis>,
    /// The configured setting first, then the ablation if enabled.
    pub runs: Vec<EvalRun>,
}

impl ExperimentOutput {
    /// Records of the configured type-inference setting.
    pub fn primary(&self) -> &[EvalRecord] {
        &self.runs[0].records
    }
}

/// Trains a model per target, in parallel when `jobs > 1`.
pub fn train_all(
    cfg: &ExperimentConfig,
    vocab: &Vocab,
    entries: &[DatasetEntry],
    jobs: usize,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<(Vec<((IsaId, OptLevel), Model)>, Vec<(IsaId, OptLevel, u64, f64)>, Vec<((IsaId, OptLevel), usize)>), PipelineError> {
    let m = model_config(cfg, vocab).max_positions;
    let targets = cfg.targets();
    let trained: Vec<_> = pool(jobs)?.install(|| {
        targets
            .par_iter()
            .map(|&(isa, opt)| -> Result<_, PipelineError> {
                let pairs = training_pairs(vocab, entries, isa, opt, m)?;
                progress(&format!("training {isa}/{opt} on {} pairs", pairs.len()));
                let mut log = Vec::new();
                let every = (cfg.train.max_steps / 10).max(1);
                let model = train_model(cfg, vocab, &pairs, isa, opt, |step, loss| {
                    log.push((isa, opt, step, loss));
                    if step % every == 0 {
                        progress(&format!("{isa}/{opt} step {step} loss {loss:.4}"));
                    }
                })?;
                Ok(((isa, opt), model, log, pairs.len()))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut models = Vec::new();
    let mut logs = Vec::new();
    let mut counts = Vec::new();
    for (t, model, log, n) in trained {
        models.push((t, model));
        logs.extend(log);
        counts.push((t, n));
    }
    Ok((models, logs, counts))
}

/// Decodes once and evaluates with the configured type-inference setting
/// and, when `cfg.ablation` is set, with the opposite one.
pub fn evaluate_all(
    cfg: &ExperimentConfig,
    entries: &[DatasetEntry],
    hyps: &[Hypothesis],
    jobs: usize,
) -> Result<Vec<EvalRun>, PipelineError> {
    let mut settings = vec![cfg.type_inference];
    if cfg.ablation {
        settings.push(!cfg.type_inference);
    }
    settings
        .into_iter()
        .map(|ti| Ok(EvalRun { type_inference: ti, records: evaluate(entries, hyps, &cfg.equiv_for(ti), jobs)? }))
        .collect()
}

/// The whole run: data, tokenizer, models, decoding and evaluation. Writes
/// every artifact to `out_dir` when given.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: usize,
    out_dir: Option<&Path>,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<ExperimentOutput, PipelineError> {
    cfg.validate()?;
    let entries = build_dataset(cfg)?;
    let leaked = leakage(&entries);
    if leaked > 0 {
        return Err(PipelineError::Leakage(leaked));
    }
    progress(&format!("dataset: {} entries", entries.len()));
    let vocab = train_tokenizer(cfg, &entries)?;
    progress(&format!("tokenizer: {} ids", vocab.n_ids()));
    let (models, train_log, n_pairs) = train_all(cfg, &vocab, &entries, jobs, progress)?;
    let hypotheses = decode_test(&models, &vocab, &entries, &cfg.beam, jobs)?;
    progress(&format!("decoded {} test entries", hypotheses.len()));
    let runs = evaluate_all(cfg, &entries, &hypotheses, jobs)?;
    let out = ExperimentOutput { entries, vocab, models, train_log, n_pairs, hypotheses, runs };
    if let Some(dir) = out_dir {
        report::write_all(dir, cfg, &out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::from_kv(
            "n_functions = 60\ntest_percent = 10\nisa = stk\nopt = O2\ntokenizer.vocab_size = 300\n\
             model.d_model = 16\nmodel.heads = 2\nmodel.ffn_dim = 32\nmodel.enc_layers = 1\nmodel.dec_layers = 1\n\
             model.max_positions = 128\ntrain.max_steps = 3\ntrain.batch_size = 4\nbeam.k = 2\nbeam.max_decode_len = 8\n",
        )
        .unwrap();
        c.equiv.n_tests = 3;
        c
    }

    #[test]
    fn tokenizer_never_sees_test_functions() {
        let cfg = tiny();
        let entries = build_dataset(&cfg).unwrap();
        let corpus = tokenizer_corpus(&entries).unwrap();
        for e in entries.iter().filter(|e| e.split == Split::Test) {
            assert!(!corpus.contains(&e.asm_text));
        }
        let n_train = entries.iter().filter(|e| e.split == Split::Train).count();
        assert_eq!(corpus.len(), 2 * n_train);
    }

    #[test]
    fn long_sources_are_truncated_not_dropped() {
        let entries = build_dataset(&tiny()).unwrap();
        let vocab = train_tokenizer(&tiny(), &entries).unwrap();
        let asm = &entries[0].asm_text;
        let full = encode_source(&vocab, asm, 10_000);
        let cut = encode_source(&vocab, asm, 8);
        assert_eq!(cut.len(), 8);
        assert_eq!(cut[..7], full[..7]);
        assert_eq!(*cut.last().unwrap(), EOS);
    }

    #[test]
    fn reference_text_passes_its_own_evaluation() {
        let cfg = tiny();
        let entries = build_dataset(&cfg).unwrap();
        let hyps: Vec<Hypothesis> = entries
            .iter()
            .filter(|e| e.split == Split::Test)
            .map(|e| Hypothesis { id: e.id.clone(), isa: e.isa, opt: e.opt, hypothesis: e.target().unwrap() })
            .collect();
        let recs = evaluate(&entries, &hyps, &cfg.equiv_for(true), 1).unwrap();
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.io_pass && r.compiles && r.edit_similarity == 1.0));
        let bad = Hypothesis { hypothesis: "int f( {".into(), ..hyps[0].clone() };
        let r = evaluate(&entries, &[bad], &cfg.equiv_for(true), 1).unwrap();
        assert!(!r[0].compiles && !r[0].io_pass);
    }

    #[test]
    fn tiny_run_is_reproducible_across_thread_counts() {
        let cfg = tiny();
        let a = run_experiment(&cfg, 1, None, &|_| {}).unwrap();
        let b = run_experiment(&cfg, 2, None, &|_| {}).unwrap();
        assert_eq!(a.hypotheses, b.hypotheses);
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.runs.len(), 2);
        assert_eq!(a.train_log.len(), 3);
    }
}
