use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn declab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_declab")).current_dir(dir).args(args).output().expect("spawn declab")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("declab-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

const TINY: &str = "\
n_functions = 40
test_percent = 10
isa = stk
opt = O2
tokenizer.vocab_size = 300
model.d_model = 16
model.heads = 2
model.ffn_dim = 32
model.enc_layers = 1
model.dec_layers = 1
model.max_positions = 128
train.batch_size = 4
train.max_steps = 2
beam.k = 2
beam.max_decode_len = 6
equiv.n_tests = 3
";

#[test]
fn exit_codes() {
    let d = scratch("codes");
    assert_eq!(declab(&d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(declab(&d, &["--help"]).status.code(), Some(0));
    fs::write(d.join("bad.cfg"), "seed = 1\nmodel.d_model = x\n").unwrap();
    let out = declab(&d, &["--config", "bad.cfg", "gen-data", "--out", "data.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(declab(&d, &["--set", "nonsense=1", "gen-data", "--out", "x"]).status.code(), Some(2));
    // a missing input aborts the run
    let out = declab(&d, &["train-tokenizer", "--data", "missing.jsonl", "--out", "v.txt"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn staged_commands_match_the_one_shot_run() {
    let d = scratch("stages");
    fs::write(d.join("tiny.cfg"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let mut full = vec!["--config", "tiny.cfg"];
        full.extend_from_slice(args);
        let out = declab(&d, &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["gen-data", "--out", "data.jsonl"]);
    ok(&["train-tokenizer", "--data", "data.jsonl", "--out", "vocab.txt"]);
    ok(&["train", "--data", "data.jsonl", "--vocab", "vocab.txt", "--out", "models"]);
    ok(&["eval", "--data", "data.jsonl", "--vocab", "vocab.txt", "--models", "models", "--out", "eval"]);
    ok(&["run", "--out", "run"]);
    for f in ["summary.csv", "correlation.csv", "buckets.csv", "categories.csv", "records_ti.csv", "records_no_ti.csv", "hypotheses.jsonl"] {
        assert_eq!(fs::read(d.join("eval").join(f)).unwrap(), fs::read(d.join("run").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(d.join("data.jsonl")).unwrap(), fs::read(d.join("run/dataset.jsonl")).unwrap());
    assert_eq!(fs::read(d.join("models/model-stk-O2.ckpt")).unwrap(), fs::read(d.join("run/model-stk-O2.ckpt")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["files"]["summary.csv"].as_str().unwrap().len() == 64);

    ok(&["report", "--records", "eval/records_ti.csv", "eval/records_no_ti.csv", "--data", "data.jsonl", "--out", "again"]);
    for f in ["summary.csv", "correlation.csv", "buckets.csv", "categories.csv"] {
        assert_eq!(fs::read(d.join("eval").join(f)).unwrap(), fs::read(d.join("again").join(f)).unwrap(), "{f}");
    }

    let asm = fs::read_to_string(d.join("data.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(asm.lines().next().unwrap()).unwrap();
    fs::write(d.join("one.s"), first["asm_text"].as_str().unwrap()).unwrap();
    let out = ok(&["decompile", "--model", "models/model-stk-O2.ckpt", "--vocab", "vocab.txt", "one.s"]);
    assert!(out.stdout.ends_with(b"\n"));
}

#[test]
fn seed_flag_changes_the_data() {
    let d = scratch("seed");
    fs::write(d.join("tiny.cfg"), TINY).unwrap();
    let gen = |seed: &str, out: &str| {
        assert!(declab(&d, &["--config", "tiny.cfg", "--seed", seed, "gen-data", "--out", out]).status.success());
        fs::read(d.join(out)).unwrap()
    };
    assert_eq!(gen("4", "a.jsonl"), gen("4", "b.jsonl"));
    assert_ne!(gen("4", "a.jsonl"), gen("5", "c.jsonl"));
}
