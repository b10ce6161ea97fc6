//! CSV/JSON artifacts of a run. Everything written here is a pure function
//! of the configuration, so two runs with the same seeds produce identical
//! bytes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use declab_core::metrics::{bucket_accuracy, correlation_table, write_buckets_csv, write_correlation_csv, write_records_csv, EvalRecord, BUCKET_HEADER, RECORD_COLUMNS};
use declab_core::toyisa::{IsaId, OptLevel};
use declab_seq2seq::save_checkpoint;

use crate::config::ExperimentConfig;
use crate::dataset::{write_jsonl, DatasetEntry};
use crate::experiment::{EvalRun, ExperimentOutput, Hypothesis};
use crate::gen::Category;
use crate::PipelineError;

pub fn records_file(type_inference: bool) -> &'static str {
    if type_inference {
        "records_ti.csv"
    } else {
        "records_no_ti.csv"
    }
}

pub fn model_file(isa: IsaId, opt: OptLevel) -> String {
    format!("model-{isa}-{opt}.ckpt")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// `isa/opt` or `all`.
    pub stratum: String,
    pub type_inference: bool,
    pub n: usize,
    pub io_accuracy: f64,
    pub compile_rate: f64,
    pub mean_edit_similarity: f64,
}

fn summarize(stratum: String, ti: bool, recs: &[&EvalRecord]) -> SummaryRow {
    let n = recs.len();
    let mean = |f: &dyn Fn(&EvalRecord) -> f64| if n == 0 { 0.0 } else { recs.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
    SummaryRow {
        stratum,
        type_inference: ti,
        n,
        io_accuracy: 100.0 * mean(&|r| r.io_pass as u8 as f64),
        compile_rate: 100.0 * mean(&|r| r.compiles as u8 as f64),
        mean_edit_similarity: mean(&|r| r.edit_similarity),
    }
}

fn strata(records: &[EvalRecord]) -> Vec<(IsaId, OptLevel)> {
    let mut s: Vec<_> = records.iter().map(|r| (r.isa, r.opt)).collect();
    s.sort();
    s.dedup();
    s
}

/// Per stratum in sorted order, then pooled, for each run.
pub fn summary(runs: &[EvalRun]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for run in runs {
        for (isa, opt) in strata(&run.records) {
            let recs: Vec<&EvalRecord> = run.records.iter().filter(|r| r.isa == isa && r.opt == opt).collect();
            out.push(summarize(format!("{isa}/{opt}"), run.type_inference, &recs));
        }
        out.push(summarize("all".into(), run.type_inference, &run.records.iter().collect::<Vec<_>>()));
    }
    out
}

pub fn write_summary_csv(w: &mut impl Write, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "stratum,type_inference,n,io_accuracy,compile_rate,mean_edit_similarity")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.2},{:.2},{:.4}",
            r.stratum, r.type_inference as u8, r.n, r.io_accuracy, r.compile_rate, r.mean_edit_similarity
        )?;
    }
    Ok(())
}

/// Accuracy against assembler length, per stratum and pooled.
pub fn write_length_buckets(w: &mut impl Write, records: &[EvalRecord], n_bins: usize) -> std::io::Result<()> {
    writeln!(w, "{BUCKET_HEADER}")?;
    for (isa, opt) in strata(records) {
        let recs: Vec<EvalRecord> = records.iter().filter(|r| r.isa == isa && r.opt == opt).cloned().collect();
        write_buckets_csv(w, &format!("{isa}/{opt}"), &bucket_accuracy(&recs, n_bins, |r| r.asm_length as f64))?;
    }
    write_buckets_csv(w, "all", &bucket_accuracy(records, n_bins, |r| r.asm_length as f64))
}

/// IO accuracy per program category, joined to the dataset by entry.
pub fn write_categories_csv(w: &mut impl Write, runs: &[EvalRun], entries: &[DatasetEntry]) -> std::io::Result<()> {
    let cat: BTreeMap<(&str, IsaId, OptLevel), Category> = entries.iter().map(|e| ((e.id.as_str(), e.isa, e.opt), e.category)).collect();
    writeln!(w, "stratum,type_inference,category,n,io_accuracy")?;
    for run in runs {
        let mut cells: BTreeMap<(String, Category), (usize, usize)> = BTreeMap::new();
        for r in &run.records {
            let Some(&c) = cat.get(&(r.id.as_str(), r.isa, r.opt)) else { continue };
            for s in [format!("{}/{}", r.isa, r.opt), "all".to_string()] {
                let cell = cells.entry((s, c)).or_default();
                cell.0 += 1;
                cell.1 += r.io_pass as usize;
            }
        }
        for ((s, c), (n, pass)) in cells {
            writeln!(w, "{s},{},{},{n},{:.2}", run.type_inference as u8, c.name(), 100.0 * pass as f64 / n as f64)?;
        }
    }
    Ok(())
}

fn bool_field(v: &str) -> Option<bool> {
    match v {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads what `write_records_csv` wrote.
pub fn read_records_csv(text: &str) -> Result<Vec<EvalRecord>, PipelineError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|l| l.1).unwrap_or("");
    if header != RECORD_COLUMNS.join(",") {
        return Err(PipelineError::Data("records file: unexpected header".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || PipelineError::Data(format!("records file line {}: malformed row", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != RECORD_COLUMNS.len() {
            return Err(bad());
        }
        out.push(EvalRecord {
            id: f[0].to_string(),
            isa: f[1].parse().map_err(|_| bad())?,
            opt: f[2].parse().map_err(|_| bad())?,
            compiles: bool_field(f[3]).ok_or_else(bad)?,
            io_pass: bool_field(f[4]).ok_or_else(bad)?,
            edit_similarity: f[5].parse().map_err(|_| bad())?,
            asm_length: f[6].parse().map_err(|_| bad())?,
            c_length: f[7].parse().map_err(|_| bad())?,
            num_func_args: f[8].parse().map_err(|_| bad())?,
            num_pointers: f[9].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Summary, correlation, length-bucket and category tables from records.
/// `entries` is needed only for the category table.
pub fn write_tables(dir: &Path, runs: &[EvalRun], entries: Option<&[DatasetEntry]>, n_bins: usize) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    let primary = &runs[0].records;
    let mut w = create(dir, "summary.csv")?;
    write_summary_csv(&mut w, &summary(runs))?;
    w.flush()?;
    let mut w = create(dir, "correlation.csv")?;
    write_correlation_csv(&mut w, &correlation_table(primary))?;
    w.flush()?;
    let mut w = create(dir, "buckets.csv")?;
    write_length_buckets(&mut w, primary, n_bins)?;
    w.flush()?;
    if let Some(entries) = entries {
        let mut w = create(dir, "categories.csv")?;
        write_categories_csv(&mut w, runs, entries)?;
        w.flush()?;
    }
    Ok(())
}

pub fn write_hypotheses(w: &mut impl Write, hyps: &[Hypothesis]) -> Result<(), PipelineError> {
    for h in hyps {
        serde_json::to_writer(&mut *w, h).map_err(|e| PipelineError::Data(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    model_seed: u64,
    train_seed: u64,
    equiv_input_seed: u64,
    n_entries: usize,
    n_test_records: usize,
    training_pairs: BTreeMap<String, usize>,
    files: BTreeMap<&'a str, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Every artifact of a finished run, plus `manifest.json` with the seeds and
/// a SHA-256 of each file.
pub fn write_all(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_kv())?;
    let mut w = create(dir, "dataset.jsonl")?;
    write_jsonl(&mut w, &out.entries)?;
    w.flush()?;
    fs::write(dir.join("vocab.txt"), out.vocab.to_text())?;
    for ((isa, opt), model) in &out.models {
        let mut w = create(dir, &model_file(*isa, *opt))?;
        save_checkpoint(model, &mut w)?;
        w.flush()?;
    }
    let mut w = create(dir, "train_log.csv")?;
    writeln!(w, "isa,opt,step,loss")?;
    for (isa, opt, step, loss) in &out.train_log {
        writeln!(w, "{isa},{opt},{step},{loss:.6}")?;
    }
    w.flush()?;
    let mut w = create(dir, "hypotheses.jsonl")?;
    write_hypotheses(&mut w, &out.hypotheses)?;
    w.flush()?;
    for run in &out.runs {
        let mut w = create(dir, records_file(run.type_inference))?;
        write_records_csv(&mut w, &run.records)?;
        w.flush()?;
    }
    write_tables(dir, &out.runs, Some(&out.entries), cfg.n_bins)?;

    let mut names: Vec<String> = vec![
        "config.txt".into(),
        "dataset.jsonl".into(),
        "vocab.txt".into(),
        "train_log.csv".into(),
        "hypotheses.jsonl".into(),
        "summary.csv".into(),
        "correlation.csv".into(),
        "buckets.csv".into(),
        "categories.csv".into(),
    ];
    names.extend(out.models.iter().map(|((i, o), _)| model_file(*i, *o)));
    names.extend(out.runs.iter().map(|r| records_file(r.type_inference).to_string()));
    let mut files = BTreeMap::new();
    for n in &names {
        files.insert(n.as_str(), sha256_hex(&fs::read(dir.join(n))?));
    }
    let manifest = Manifest {
        seed: cfg.seed,
        model_seed: cfg.model_seed,
        train_seed: cfg.train.seed,
        equiv_input_seed: cfg.equiv.input_seed,
        n_entries: out.entries.len(),
        n_test_records: out.hypotheses.len(),
        training_pairs: out.n_pairs.iter().map(|((i, o), n)| (format!("{i}/{o}"), *n)).collect(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Data(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}
