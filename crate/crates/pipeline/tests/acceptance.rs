//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release -p declab-pipeline --test acceptance` runs all of
//! them; numeric arguments (`-- 1 4 8`) select a subset. The end-to-end
//! criteria (5, 6, 7, 9) share one experiment, which is the long part.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use declab_core::equiv::{gen_inputs, EquivConfig};
use declab_core::metrics::{bucket_accuracy, correlation_table, edit_distance, EvalRecord};
use declab_core::minic::interpret;
use declab_core::tokenizer::{normalize, UNK};
use declab_core::toyisa::{compile, run_vm, IsaId, OptLevel};
use declab_pipeline::dataset::Split;
use declab_pipeline::experiment::{decompile, evaluate, training_pairs, train_tokenizer, Hypothesis};
use declab_pipeline::gen::generate_functions;
use declab_pipeline::report::{self, model_file};
use declab_pipeline::{build_dataset, run_experiment, ExperimentConfig, ExperimentOutput};
use declab_seq2seq::{BeamConfig, Model, Model64, ModelConfig, TrainConfig, Trainer, PAD};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn differential_compiler() -> Outcome {
    let fns = generate_functions(101, 1000).map_err(|e| e.to_string())?;
    let equiv = EquivConfig { n_tests: 10, ..EquivConfig::default() };
    let (mut cases, mut bad) = (0usize, Vec::new());
    for ast in &fns {
        let inputs = gen_inputs(&ast.signature(), &equiv);
        for isa in IsaId::ALL {
            for opt in OptLevel::ALL {
                let prog = compile(ast, isa, opt).map_err(|e| format!("{}: {e}", ast.name))?;
                for input in &inputs {
                    cases += 1;
                    let want = interpret(ast, input, equiv.step_limit);
                    let got = run_vm(&prog, input, equiv.step_limit);
                    if !want.equivalent(&got) && bad.len() < 3 {
                        bad.push(format!("{}@{isa}/{opt}", ast.name));
                    }
                }
            }
        }
    }
    check(cases == 40_000 && bad.is_empty(), format!("{cases} cases, mismatches: {bad:?}"))
}

// ---------------------------------------------------------------- 2

fn gradient_fidelity() -> Outcome {
    let cfg = ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        max_positions: 8,
        vocab_size: 13,
        share_embeddings: true,
    };
    let m = Model64::init(cfg, 3).map_err(|e| e.to_string())?;
    let src = [1u32, 7, 4, 11, 9, 2];
    let tgt = [1u32, 5, 12, 3, 8, 2, PAD];
    let (_, grad) = m.backward(&src, &tgt).map_err(|e| e.to_string())?;
    let h = 1e-4;
    let (mut worst_rel, mut worst_abs, mut failures) = (0.0f64, 0.0f64, 0usize);
    let mut plus = m.clone();
    for i in 0..m.n_params() {
        let orig = m.params[i];
        plus.params[i] = orig + h;
        let lp = plus.loss(&src, &tgt).unwrap().0;
        plus.params[i] = orig - h;
        let lm = plus.loss(&src, &tgt).unwrap().0;
        plus.params[i] = orig;
        let num = (lp - lm) / (2.0 * h);
        let err = (grad[i] - num).abs();
        let scale = grad[i].abs().max(num.abs());
        worst_abs = worst_abs.max(err);
        if scale > 1e-5 {
            worst_rel = worst_rel.max(err / scale);
        }
        if err > 1e-6 && err > 1e-3 * scale {
            failures += 1;
        }
    }
    check(
        failures == 0,
        format!(
            "{} parameters, {failures} outside tolerance; worst absolute error {worst_abs:.1e}, worst relative error {worst_rel:.1e} where |grad| > 1e-5",
            m.n_params()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn overfit() -> Outcome {
    let cfg = ExperimentConfig { n_functions: 400, ..ExperimentConfig::default() };
    let entries = build_dataset(&cfg).map_err(|e| e.to_string())?;
    let vocab = train_tokenizer(&cfg, &entries).map_err(|e| e.to_string())?;
    let mut pairs = training_pairs(&vocab, &entries, IsaId::Reg, OptLevel::O2, 128).map_err(|e| e.to_string())?;
    pairs.truncate(64);
    if pairs.len() < 64 {
        return Err(format!("only {} pairs", pairs.len()));
    }
    let mcfg = ModelConfig { d_model: 64, heads: 4, ffn_dim: 256, max_positions: 128, vocab_size: vocab.n_ids(), ..ModelConfig::default() };
    let tcfg = TrainConfig { batch_size: 16, learning_rate: 2e-3, warmup_steps: 100, max_steps: 0, ..TrainConfig::default() };
    let mut trainer = Trainer::new(Model::init(mcfg, 0).map_err(|e| e.to_string())?, tcfg);
    let beam = BeamConfig { k: 5, max_decode_len: 128 };
    let exact = |m: &Model| pairs.iter().filter(|(s, t)| declab_seq2seq::beam_search(m, s, &beam).unwrap() == t[1..t.len() - 1]).count();
    let mut hit = 0;
    let mut steps = 0;
    while steps < 2000 {
        steps += 250;
        trainer.cfg.max_steps = steps;
        trainer.run(&pairs, |_, _| {}).map_err(|e| e.to_string())?;
        hit = exact(&trainer.model);
        if hit == pairs.len() {
            break;
        }
    }
    check(hit == 64, format!("{hit}/64 exact after {steps} steps"))
}

// ---------------------------------------------------------------- 4

/// The textbook recursion, without memoisation.
fn naive_lev(a: &[u8], b: &[u8]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if a[0] == b[0] {
        return naive_lev(&a[1..], &b[1..]);
    }
    1 + naive_lev(&a[1..], b).min(naive_lev(a, &b[1..])).min(naive_lev(&a[1..], &b[1..]))
}

fn edit_distance_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let word = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.gen_range(0..=7)).map(|_| b"abc"[rng.gen_range(0..3)]).collect() };
    let mut bad = 0;
    for _ in 0..600 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        bad += (edit_distance(&a, &b) != naive_lev(&a, &b)) as usize;
    }
    let kitten = edit_distance(b"kitten", b"sitting");
    let base = edit_distance(b"", b"abcd");
    check(bad == 0 && kitten == 3 && base == 4, format!("600 pairs, {bad} mismatches; kitten/sitting = {kitten}; empty/abcd = {base}"))
}

// ---------------------------------------------------------------- 8

fn tokenizer_properties() -> Outcome {
    let cfg = ExperimentConfig::default();
    let entries = build_dataset(&cfg).map_err(|e| e.to_string())?;
    let vocab = train_tokenizer(&cfg, &entries).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for e in &entries {
        lines.extend(e.asm_text.lines().map(str::to_string));
        if e.isa == IsaId::ALL[0] && e.opt == OptLevel::ALL[0] {
            lines.extend(e.c_source.lines().map(str::to_string));
        }
    }
    let (mut unk, mut not_fixpoint) = (0usize, 0usize);
    for l in &lines {
        let ids = vocab.encode(l);
        unk += ids.iter().filter(|&&i| i == UNK).count();
        not_fixpoint += (vocab.decode(&ids).map_err(|e| e.to_string())? != normalize(l)) as usize;
    }
    let digits: Vec<String> = vocab.encode("512").iter().map(|&i| vocab.decode(&[i]).unwrap()).collect();
    let size_ok = vocab.size() <= cfg.tokenizer.vocab_size;
    check(
        unk == 0 && not_fixpoint == 0 && digits == ["5", "1", "2"] && size_ok,
        format!(
            "{} lines, {unk} UNK, {not_fixpoint} round-trip misses, \"512\" -> {digits:?}, {} learned pieces (bound {})",
            lines.len(),
            vocab.size(),
            cfg.tokenizer.vocab_size
        ),
    )
}

// ---------------------------------------------------------------- end to end

/// Desk-scale model and training budget for the end-to-end criteria.
fn e2e_config() -> ExperimentConfig {
    ExperimentConfig::from_kv(
        "model.d_model = 64\n\
         model.heads = 4\n\
         model.ffn_dim = 256\n\
         model.max_positions = 1024\n\
         train.batch_size = 16\n\
         train.learning_rate = 0.001\n\
         train.warmup_steps = 200\n\
         train.max_steps = 4000\n\
         beam.max_decode_len = 200\n",
    )
    .expect("valid end-to-end config")
}

struct E2e {
    dir: PathBuf,
    cfg: ExperimentConfig,
    out: ExperimentOutput,
}

fn io_rate(recs: &[&EvalRecord]) -> f64 {
    recs.iter().filter(|r| r.io_pass).count() as f64 / recs.len().max(1) as f64
}

fn compile_rate(recs: &[&EvalRecord]) -> f64 {
    recs.iter().filter(|r| r.compiles).count() as f64 / recs.len().max(1) as f64
}

fn stratum<'a>(recs: &'a [EvalRecord], isa: IsaId, opt: OptLevel) -> Vec<&'a EvalRecord> {
    recs.iter().filter(|r| r.isa == isa && r.opt == opt).collect()
}

fn directional(e: &E2e) -> Outcome {
    let on = &e.out.runs.iter().find(|r| r.type_inference).ok_or("no run with type inference")?.records;
    let off = &e.out.runs.iter().find(|r| !r.type_inference).ok_or("no run without type inference")?.records;
    let mut notes = Vec::new();
    let mut ok = true;
    // (a)
    for isa in IsaId::ALL {
        let o0 = io_rate(&stratum(on, isa, OptLevel::O0));
        let o2 = io_rate(&stratum(on, isa, OptLevel::O2));
        ok &= o0 >= o2;
        notes.push(format!("{isa}: O0 {:.1}% vs O2 {:.1}%", 100.0 * o0, 100.0 * o2));
    }
    // (b)
    let mut strictly = false;
    for isa in IsaId::ALL {
        for opt in OptLevel::ALL {
            let (a, b) = (stratum(on, isa, opt), stratum(off, isa, opt));
            let (ca, cb, ia, ib) = (compile_rate(&a), compile_rate(&b), io_rate(&a), io_rate(&b));
            ok &= ca >= cb && ia >= ib;
            strictly |= ca > cb;
            notes.push(format!("{isa}/{opt} TI compile {:.1}%/{:.1}% io {:.1}%/{:.1}%", 100.0 * ca, 100.0 * cb, 100.0 * ia, 100.0 * ib));
        }
    }
    ok &= strictly;
    // (c)
    for isa in IsaId::ALL {
        for opt in OptLevel::ALL {
            let recs: Vec<EvalRecord> = stratum(on, isa, opt).into_iter().cloned().collect();
            let b = bucket_accuracy(&recs, e.cfg.n_bins, |r| r.asm_length as f64);
            let (first, last) = (b[0].accuracy.unwrap_or(0.0), b[b.len() - 1].accuracy.unwrap_or(0.0));
            ok &= first >= last;
            notes.push(format!("{isa}/{opt} shortest bin {:.1}% (n={}) longest {:.1}% (n={})", 100.0 * first, b[0].count, 100.0 * last, b[b.len() - 1].count));
        }
    }
    check(ok, notes.join("; "))
}

fn correlation(e: &E2e) -> Outcome {
    let table = correlation_table(e.out.primary());
    let mut by_stratum: BTreeMap<&str, Vec<(&str, Option<f64>)>> = BTreeMap::new();
    for c in &table {
        by_stratum.entry(c.stratum.as_str()).or_default().push((c.feature.as_str(), c.r));
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for (s, cells) in &by_stratum {
        let rc = cells.iter().find(|c| c.0 == "compiles").and_then(|c| c.1);
        // negative correlates (lengths) are not competitors
        let top = cells.iter().filter(|c| c.0 != "compiles").filter_map(|c| c.1.map(|r| (c.0, r))).filter(|c| c.1 > 0.0).max_by(|a, b| a.1.total_cmp(&b.1));
        let pass = match (rc, top) {
            (Some(r), Some((_, t))) => r > 0.0 && r >= t,
            (Some(r), None) => r > 0.0,
            _ => false,
        };
        ok &= pass;
        let fmt = |r: Option<f64>| r.map(|r| format!("{r:.3}")).unwrap_or("undef".into());
        notes.push(format!("{s}: r(compiles) {} next positive {} {}", fmt(rc), top.map(|t| t.0).unwrap_or("-"), fmt(top.map(|t| t.1))));
    }
    check(ok, notes.join("; "))
}

fn harness_ceiling(e: &E2e) -> Outcome {
    let hyps: Vec<Hypothesis> = e
        .out
        .entries
        .iter()
        .filter(|x| x.split == Split::Test)
        .map(|x| Ok(Hypothesis { id: x.id.clone(), isa: x.isa, opt: x.opt, hypothesis: x.target()? }))
        .collect::<Result<_, declab_pipeline::PipelineError>>()
        .map_err(|x| x.to_string())?;
    let recs = evaluate(&e.out.entries, &hyps, &e.cfg.equiv_for(true), 1).map_err(|x| x.to_string())?;
    let pass = recs.iter().filter(|r| r.io_pass).count();
    check(pass == recs.len() && !recs.is_empty(), format!("{pass}/{} test entries pass", recs.len()))
}

fn run_eval(e: &E2e, jobs: usize, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_declab"))
        .arg("--config")
        .arg(e.dir.join("config.txt"))
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("eval")
        .arg("--data")
        .arg(e.dir.join("dataset.jsonl"))
        .arg("--vocab")
        .arg(e.dir.join("vocab.txt"))
        .arg("--models")
        .arg(&e.dir)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|x| x.to_string())?;
    check(status.success(), format!("declab eval exited with {status}")).map(|_| ())
}

fn determinism(e: &E2e) -> Outcome {
    let (a, b) = (e.dir.join("eval-a"), e.dir.join("eval-b"));
    run_eval(e, 1, &a)?;
    run_eval(e, 2, &b)?;
    let mut compared = Vec::new();
    let mut differ = Vec::new();
    let mut names: Vec<String> = fs::read_dir(&a).map_err(|x| x.to_string())?.filter_map(|d| d.ok()).map(|d| d.file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    for n in names.iter().filter(|n| n.ends_with(".csv") || n.ends_with(".jsonl")) {
        let (x, y) = (fs::read(a.join(n)).map_err(|x| x.to_string())?, fs::read(b.join(n)));
        if y.as_ref().ok() != Some(&x) {
            differ.push(n.clone());
        }
        compared.push(n.clone());
    }
    // the eval outputs must also match what the full run wrote
    for n in ["summary.csv", "correlation.csv", "buckets.csv", "records_ti.csv", "records_no_ti.csv"] {
        if fs::read(a.join(n)).ok() != fs::read(e.dir.join(n)).ok() {
            differ.push(format!("{n} (vs run)"));
        }
    }
    check(differ.is_empty() && compared.len() >= 6, format!("jobs 1 vs 2: compared {compared:?}, differing {differ:?}"))
}

fn e2e() -> Result<E2e, String> {
    let cfg = e2e_config();
    let dir = std::env::temp_dir().join(format!("declab-acceptance-{}", std::process::id()));
    let t = Instant::now();
    let out = run_experiment(&cfg, 1, Some(&dir), &|m| eprintln!("  [{:>6.0}s] {m}", t.elapsed().as_secs_f64())).map_err(|e| e.to_string())?;
    for row in report::summary(&out.runs) {
        println!(
            "  {:<8} ti={} n={:<4} io={:5.1}% compile={:5.1}% edit_sim={:.3}",
            row.stratum, row.type_inference as u8, row.n, row.io_accuracy, row.compile_rate, row.mean_edit_similarity
        );
    }
    // a decompile through the checkpoint on disk must agree with the in-memory model
    let (t0, m0) = &out.models[0];
    let entry = out.entries.iter().find(|x| x.split == Split::Test && (x.isa, x.opt) == *t0).ok_or("no test entry")?;
    let reloaded: Model = declab_seq2seq::load_checkpoint(fs::File::open(dir.join(model_file(t0.0, t0.1))).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let h1 = decompile(m0, &out.vocab, &entry.asm_text, &cfg.beam).map_err(|e| e.to_string())?;
    let h2 = decompile(&reloaded, &out.vocab, &entry.asm_text, &cfg.beam).map_err(|e| e.to_string())?;
    if h1 != h2 {
        return Err("checkpoint round trip changed a hypothesis".into());
    }
    Ok(E2e { dir, cfg, out })
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=9).contains(n)).collect();
    let want = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut failed = 0;
    let mut line = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !want(n) {
            return;
        }
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += r.is_err() as usize;
        println!("criterion {n} [{name}]: {tag} ({secs:.1}s) {detail}");
    };
    line(1, "differential compiler oracle", &mut differential_compiler);
    line(2, "gradient fidelity", &mut gradient_fidelity);
    line(3, "overfit sanity", &mut overfit);
    line(4, "edit-distance oracle", &mut edit_distance_oracle);
    let e2e_wanted = [5, 6, 7, 9].iter().any(|&n| want(n));
    let run = if e2e_wanted { Some(e2e()) } else { None };
    let with = |f: fn(&E2e) -> Outcome| -> Outcome {
        match &run {
            Some(Ok(e)) => f(e),
            Some(Err(m)) => Err(format!("end-to-end run failed: {m}")),
            None => Err("not run".into()),
        }
    };
    line(5, "end-to-end directional checks", &mut || with(directional));
    line(6, "correlation sanity", &mut || with(correlation));
    line(7, "harness ceiling", &mut || with(harness_ceiling));
    line(8, "tokenizer properties", &mut tokenizer_properties);
    line(9, "determinism", &mut || with(determinism));
    if let Some(Ok(e)) = &run {
        println!("end-to-end artifacts: {}", e.dir.display());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
