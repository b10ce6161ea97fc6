use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use declab_core::metrics::write_records_csv;
use declab_core::tokenizer::Vocab;
use declab_pipeline::dataset::{leakage, read_jsonl, write_jsonl};
use declab_pipeline::experiment::{decode_test, decompile, evaluate_all, train_all, train_tokenizer, EvalRun};
use declab_pipeline::report::{self, model_file, records_file};
use declab_pipeline::{build_dataset, run_experiment, DatasetEntry, ExperimentConfig, PipelineError};
use declab_seq2seq::{load_checkpoint, save_checkpoint, Model};

/// Neural decompilation lab: data generation, training and evaluation.
#[derive(Parser)]
#[command(name = "declab", version)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.max_steps=500`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training, decoding and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate functions, compile them and write the split dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the shared unigram tokenizer on the training split.
    TrainTokenizer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per configured (isa, opt).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Directory for the checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompile one assembler file (`-` for stdin) and print the C.
    Decompile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        asm: PathBuf,
    },
    /// Decode the test split and write records and tables.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Everything from data generation to tables, into one directory.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the tables from existing records files.
    Report {
        /// Records of the primary setting, then optionally the ablation.
        #[arg(long, required = true, num_args = 1..=2)]
        records: Vec<PathBuf>,
        /// Dataset, for the per-category table.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)?;
        cfg.apply_kv(&text)?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| PipelineError::Config { line: 0, msg: format!("--set {o}: expected KEY=VALUE") })?;
        cfg.set(k.trim(), v.trim()).map_err(|msg| PipelineError::Config { line: 0, msg: format!("--set {o}: {msg}") })?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress(msg: &str) {
    eprintln!("{msg}");
}

fn read_dataset(path: &Path) -> Result<Vec<DatasetEntry>, PipelineError> {
    let entries = read_jsonl(BufReader::new(File::open(path)?))?;
    let leaked = leakage(&entries);
    if leaked > 0 {
        return Err(PipelineError::Leakage(leaked));
    }
    Ok(entries)
}

fn read_vocab(path: &Path) -> Result<Vocab, PipelineError> {
    Ok(Vocab::from_text(&fs::read_to_string(path)?)?)
}

fn read_model(path: &Path) -> Result<Model, PipelineError> {
    Ok(load_checkpoint(BufReader::new(File::open(path)?))?)
}

fn write_runs(dir: &Path, runs: &[EvalRun]) -> Result<(), PipelineError> {
    for run in runs {
        let mut w = BufWriter::new(File::create(dir.join(records_file(run.type_inference)))?);
        write_records_csv(&mut w, &run.records)?;
        w.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::GenData { out } => {
            let entries = build_dataset(&cfg)?;
            let mut w = BufWriter::new(File::create(out)?);
            write_jsonl(&mut w, &entries)?;
            w.flush()?;
            progress(&format!("wrote {} entries", entries.len()));
        }
        Cmd::TrainTokenizer { data, out } => {
            let vocab = train_tokenizer(&cfg, &read_dataset(data)?)?;
            fs::write(out, vocab.to_text())?;
            progress(&format!("vocabulary of {} ids", vocab.n_ids()));
        }
        Cmd::Train { data, vocab, out } => {
            let (entries, vocab) = (read_dataset(data)?, read_vocab(vocab)?);
            let (models, _, _) = train_all(&cfg, &vocab, &entries, cli.jobs, &progress)?;
            fs::create_dir_all(out)?;
            for ((isa, opt), m) in &models {
                let mut w = BufWriter::new(File::create(out.join(model_file(*isa, *opt)))?);
                save_checkpoint(m, &mut w)?;
                w.flush()?;
            }
        }
        Cmd::Decompile { model, vocab, asm } => {
            let mut text = String::new();
            if asm.as_os_str() == "-" {
                std::io::stdin().read_to_string(&mut text)?;
            } else {
                text = fs::read_to_string(asm)?;
            }
            let c = decompile(&read_model(model)?, &read_vocab(vocab)?, &text, &cfg.beam)?;
            println!("{c}");
        }
        Cmd::Eval { data, vocab, models, out } => {
            let (entries, vocab) = (read_dataset(data)?, read_vocab(vocab)?);
            let mut loaded = Vec::new();
            for (isa, opt) in cfg.targets() {
                loaded.push(((isa, opt), read_model(&models.join(model_file(isa, opt)))?));
            }
            let hyps = decode_test(&loaded, &vocab, &entries, &cfg.beam, cli.jobs)?;
            let runs = evaluate_all(&cfg, &entries, &hyps, cli.jobs)?;
            fs::create_dir_all(out)?;
            let mut w = BufWriter::new(File::create(out.join("hypotheses.jsonl"))?);
            report::write_hypotheses(&mut w, &hyps)?;
            w.flush()?;
            write_runs(out, &runs)?;
            report::write_tables(out, &runs, Some(&entries), cfg.n_bins)?;
        }
        Cmd::Run { out } => {
            let res = run_experiment(&cfg, cli.jobs, Some(out), &progress)?;
            for row in report::summary(&res.runs) {
                progress(&format!(
                    "{:<8} ti={} n={:<4} io={:.1}% compile={:.1}% edit_sim={:.3}",
                    row.stratum, row.type_inference as u8, row.n, row.io_accuracy, row.compile_rate, row.mean_edit_similarity
                ));
            }
        }
        Cmd::Report { records, data, out } => {
            let mut runs = Vec::new();
            for (i, path) in records.iter().enumerate() {
                let recs = report::read_records_csv(&fs::read_to_string(path)?)?;
                // the second file holds the opposite setting
                runs.push(EvalRun { type_inference: cfg.type_inference == (i == 0), records: recs });
            }
            let entries = data.as_deref().map(read_dataset).transpose()?;
            report::write_tables(out, &runs, entries.as_deref(), cfg.n_bins)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("declab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
