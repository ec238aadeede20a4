use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: [&str; 10] = [
    "--hidden",
    "16",
    "--heads",
    "2",
    "--layers",
    "1",
    "--batch",
    "4",
    "--max-len",
    "40",
];

fn kgpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgpt"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = kgpt(args);
    assert!(
        out.status.success(),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32, name: &str) {
    let out = kgpt(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(code), "{args:?}\n{stderr}");
    assert!(stderr.starts_with(&format!("error[{name}]")), "{stderr}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        ok(&[
            "synth-data",
            "--family",
            "a",
            "--count",
            "24",
            "--seed",
            "1",
            "--out",
            &f.p("a.jsonl"),
        ]);
        ok(&[
            "synth-data",
            "--family",
            "b",
            "--count",
            "16",
            "--seed",
            "2",
            "--out",
            &f.p("b.jsonl"),
        ]);
        ok(&[
            "train-tokenizer",
            "--data",
            &f.p("a.jsonl"),
            &f.p("b.jsonl"),
            "--vocab-size",
            "320",
            "--out",
            &f.p("v.txt"),
        ]);
        f
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }

    fn pretrain(&self, out: &str, extra: &[&str]) {
        let (train, val, vocab, out) = (
            self.p("a.jsonl"),
            self.p("b.jsonl"),
            self.p("v.txt"),
            self.p(out),
        );
        let mut args = vec![
            "pretrain", "--train", &train, "--val", &val, "--vocab", &vocab, "--out", &out,
            "--epochs", "2",
        ];
        args.extend(TINY);
        args.extend(extra);
        ok(&args);
    }
}

#[test]
fn pretrain_writes_checkpoint_log_and_manifest() {
    let f = Fixture::new();
    f.pretrain("m.ckpt", &["--encoder", "seq"]);
    let log = std::fs::read_to_string(&f.p("m.ckpt.metrics.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,steps,train_loss,val_bleu,val_ppl");
    assert_eq!(lines.len(), 3);
    assert!(
        lines[1].starts_with("1,6,") && lines[2].starts_with("2,12,"),
        "{log}"
    );

    let m = json(Path::new(&f.p("m.ckpt.manifest.json")));
    assert_eq!(m["subcommand"], "pretrain");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config"]["model"]["encoder"], "seq");
    assert_eq!(m["config"]["model"]["hidden"], 16);
    assert_eq!(m["config"]["model"]["ffn"], 64);
    assert_eq!(m["outputs"]["checkpoint"], f.p("m.ckpt"));
    assert!(Path::new(&f.p("m.ckpt.metrics.csv.manifest.json")).exists());
    let ckpt = kgpt::checkpoint::load(Path::new(&f.p("m.ckpt"))).unwrap();
    assert_eq!(ckpt.metadata.steps, 12);
}

#[test]
fn pretrain_is_byte_reproducible_across_thread_counts() {
    let f = Fixture::new();
    f.pretrain("x.ckpt", &[]);
    f.pretrain("y.ckpt", &[]);
    f.pretrain("z.ckpt", &["--threads", "3"]);
    let x = std::fs::read(&f.p("x.ckpt")).unwrap();
    assert_eq!(x, std::fs::read(&f.p("y.ckpt")).unwrap());
    assert_eq!(x, std::fs::read(&f.p("z.ckpt")).unwrap());
    f.pretrain("w.ckpt", &["--seed", "1"]);
    assert_ne!(x, std::fs::read(&f.p("w.ckpt")).unwrap());
}

#[test]
fn zero_shot_equals_finetune_generate_evaluate() {
    let f = Fixture::new();
    f.pretrain("m.ckpt", &[]);
    ok(&[
        "finetune",
        "--ckpt",
        &f.p("m.ckpt"),
        "--train",
        &f.p("b.jsonl"),
        "--out",
        &f.p("ft0.ckpt"),
        "--epochs",
        "0",
    ]);
    assert_eq!(
        std::fs::read(&f.p("m.ckpt")).unwrap(),
        std::fs::read(&f.p("ft0.ckpt")).unwrap()
    );

    ok(&[
        "generate",
        "--ckpt",
        &f.p("ft0.ckpt"),
        "--data",
        &f.p("b.jsonl"),
        "--out",
        &f.p("h.jsonl"),
        "--max-len",
        "40",
    ]);
    let printed = ok(&[
        "evaluate",
        "--hyps",
        &f.p("h.jsonl"),
        "--refs",
        &f.p("b.jsonl"),
        "--ckpt",
        &f.p("ft0.ckpt"),
        "--out",
        &f.p("e.json"),
    ]);
    ok(&[
        "zero-shot",
        "--ckpt",
        &f.p("m.ckpt"),
        "--data",
        &f.p("b.jsonl"),
        "--out",
        &f.p("z.json"),
        "--max-len",
        "40",
    ]);
    let (e, z) = (
        json(Path::new(&f.p("e.json"))),
        json(Path::new(&f.p("z.json"))),
    );
    assert_eq!(e, z);
    assert_eq!(serde_json::from_str::<Value>(&printed).unwrap(), e);
    assert_eq!(e["items"], 16);
    assert!(e["perplexity"].as_f64().unwrap() > 1.0);
    assert_eq!(e["meteor"], Value::Null);

    let hyps = std::fs::read_to_string(&f.p("h.jsonl")).unwrap();
    assert_eq!(hyps.lines().count(), 16);
    ok(&[
        "generate",
        "--ckpt",
        &f.p("m.ckpt"),
        "--data",
        &f.p("b.jsonl"),
        "--out",
        &f.p("b1.jsonl"),
        "--beam",
        "1",
        "--max-len",
        "40",
    ]);
    assert_eq!(hyps, std::fs::read_to_string(&f.p("b1.jsonl")).unwrap());
    ok(&[
        "generate",
        "--ckpt",
        &f.p("m.ckpt"),
        "--data",
        &f.p("b.jsonl"),
        "--out",
        &f.p("b3.jsonl"),
        "--beam",
        "3",
        "--max-len",
        "40",
    ]);
    assert_eq!(
        std::fs::read_to_string(&f.p("b3.jsonl"))
            .unwrap()
            .lines()
            .count(),
        16
    );
}

#[test]
fn finetune_continues_and_checks_compatibility() {
    let f = Fixture::new();
    f.pretrain("m.ckpt", &[]);
    ok(&[
        "finetune",
        "--ckpt",
        &f.p("m.ckpt"),
        "--train",
        &f.p("b.jsonl"),
        "--out",
        &f.p("ft.ckpt"),
        "--epochs",
        "1",
        "--batch",
        "4",
    ]);
    let pre = kgpt::checkpoint::load(Path::new(&f.p("m.ckpt"))).unwrap();
    let ft = kgpt::checkpoint::load(Path::new(&f.p("ft.ckpt"))).unwrap();
    assert_eq!(ft.metadata.epoch, pre.metadata.epoch + 1);
    assert_eq!(ft.metadata.steps, pre.metadata.steps + 4);
    assert_eq!(ft.config.model.hidden, 16);
    fails(
        &[
            "finetune",
            "--ckpt",
            &f.p("m.ckpt"),
            "--train",
            &f.p("b.jsonl"),
            "--out",
            &f.p("bad.ckpt"),
            "--hidden",
            "32",
        ],
        1,
        "ConfigMismatch",
    );
    assert!(!Path::new(&f.p("bad.ckpt")).exists());
}

#[test]
fn few_shot_grid_and_contamination() {
    let f = Fixture::new();
    f.pretrain("m.ckpt", &["--encoder", "seq"]);
    let table = ok(&[
        "few-shot",
        "--ckpt",
        &f.p("m.ckpt"),
        "--pretrain-data",
        &f.p("a.jsonl"),
        "--train",
        &f.p("b.jsonl"),
        "--test",
        &f.p("b.jsonl"),
        "--fractions",
        "0.25,0.5",
        "--seeds",
        "0,1",
        "--epochs",
        "1",
        "--max-len",
        "40",
        "--out",
        &f.p("fs.json"),
    ]);
    let report = json(Path::new(&f.p("fs.json")));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    let mut grid: Vec<(u64, u64)> = rows
        .iter()
        .map(|r| (r["seed"].as_u64().unwrap(), r["samples"].as_u64().unwrap()))
        .collect();
    grid.sort();
    grid.dedup();
    assert_eq!(grid, [(0, 4), (0, 8), (1, 4), (1, 8)]);
    assert_eq!(report["minimal"].as_array().unwrap().len(), 2);
    assert_eq!(table, std::fs::read_to_string(&f.p("fs.tsv")).unwrap());

    fails(
        &[
            "few-shot",
            "--ckpt",
            &f.p("m.ckpt"),
            "--pretrain-data",
            &f.p("a.jsonl"),
            "--train",
            &f.p("b.jsonl"),
            "--test",
            &f.p("a.jsonl"),
            "--counts",
            "4",
            "--out",
            &f.p("leak.json"),
        ],
        1,
        "ContaminationDetected",
    );
}

#[test]
fn usage_and_input_errors() {
    fails(&["pretrain", "--bogus"], 2, "UsageError");
    fails(&["frobnicate"], 2, "UsageError");
    let f = Fixture::new();
    fails(
        &[
            "generate",
            "--ckpt",
            &f.p("none.ckpt"),
            "--data",
            &f.p("b.jsonl"),
            "--out",
            &f.p("h.jsonl"),
        ],
        1,
        "IoError",
    );
    fails(
        &[
            "generate",
            "--ckpt",
            &f.p("v.txt"),
            "--data",
            &f.p("b.jsonl"),
            "--out",
            &f.p("h.jsonl"),
        ],
        1,
        "FormatError",
    );
    f.pretrain("m.ckpt", &[]);
    fails(
        &[
            "generate",
            "--ckpt",
            &f.p("m.ckpt"),
            "--data",
            &f.p("b.jsonl"),
            "--out",
            &f.p("h.jsonl"),
            "--beam",
            "0",
        ],
        2,
        "UsageError",
    );
    fails(
        &[
            "corpus-stats",
            "--data",
            &f.p("v.txt"),
            "--out",
            &f.p("s.json"),
        ],
        1,
        "ParseError",
    );
    std::fs::write(f.p("h.jsonl"), "{\"id\":\"b-2-0\",\"hypothesis\":\"x\"}\n").unwrap();
    fails(
        &[
            "evaluate",
            "--hyps",
            &f.p("h.jsonl"),
            "--refs",
            &f.p("b.jsonl"),
            "--out",
            &f.p("e.json"),
        ],
        1,
        "MissingHypothesis",
    );
    assert!(ok(&["--help"]).contains("pretrain"));
}

#[test]
fn corpus_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let kb = [
        r#"{"id":"Q1","label":"Roma F.C.","triples":[["country",{"ref":"Q2"}],["inception","7 June 1927"],["league","Serie A"]]}"#,
        r#"{"id":"Q2","label":"Italy","triples":[["capital","Rome"]]}"#,
    ];
    let docs = [
        r#"{"tokens":["Roma","F.C.","is","an","Italy","club","founded","on","7","June","1927","and","in","Serie","A"],"anchors":[[0,2,"Q1"],[4,5,"Q2"]]}"#,
        r#"{"tokens":["Roma","F.C.","lost","to","a","team","from","far","away","yesterday","Italy"],"anchors":[[0,2,"Q1"],[10,11,"Q2"]]}"#,
        r#"{"tokens":["Italy","is","large"],"anchors":[[0,1,"Q2"]]}"#,
    ];
    std::fs::write(p("kb.jsonl"), kb.join("\n")).unwrap();
    std::fs::write(p("docs.jsonl"), docs.join("\n")).unwrap();
    ok(&[
        "build-corpus",
        "--docs",
        s(&p("docs.jsonl")),
        "--kb",
        s(&p("kb.jsonl")),
        "--out",
        s(&p("pairs.jsonl")),
        "--scored",
        s(&p("scored.jsonl")),
        "--threshold",
        "0.2",
    ]);
    let scored = std::fs::read_to_string(p("scored.jsonl")).unwrap();
    let kept = std::fs::read_to_string(p("pairs.jsonl")).unwrap();
    assert_eq!(scored.lines().count(), 2);
    assert_eq!(kept.lines().count(), 1);
    assert!(kept.contains("Serie A"));
    ok(&[
        "corpus-stats",
        "--data",
        s(&p("pairs.jsonl")),
        "--out",
        s(&p("stats.json")),
    ]);
    let stats = json(&p("stats.json"));
    assert_eq!(stats["sentences"], 1);
    assert!(std::fs::read_to_string(p("stats.tsv"))
        .unwrap()
        .starts_with("predicate\tcount\n"));
}

#[test]
fn grad_check_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("g.json");
    let stdout = ok(&["grad-check", "--seed", "13", "--out", s(&report)]);
    let rows = json(&report);
    let rows = rows.as_array().unwrap();
    assert_eq!(stdout.lines().count(), rows.len());
    assert!(rows.iter().all(|r| r["passed"] == true));
    assert_eq!(
        rows.iter()
            .filter(|r| r["name"].as_str().unwrap().starts_with("loss["))
            .count(),
        8
    );
    let e = kgpt::CliError::GradCheckFailed {
        failed: 1,
        total: rows.len(),
    };
    assert_eq!((e.name().as_str(), e.exit_code()), ("GradCheckFailed", 1));
}
