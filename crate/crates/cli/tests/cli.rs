use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_facetrank"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic collection plus its index.
fn fixture(docs: usize, topics: usize) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--seed",
        "7",
        "--docs",
        &docs.to_string(),
        "--topic-count",
        &topics.to_string(),
        "--out",
        s(&data),
    ]);
    ok(&[
        "index",
        "--corpus",
        s(&data.join("corpus.jsonl")),
        "--index",
        s(&dir.path().join("idx")),
    ]);
    (dir, data)
}

#[test]
fn eval_prints_precision_and_writes_csv() {
    let dir = TempDir::new().unwrap();
    let qrels = dir.path().join("qrels.txt");
    std::fs::write(&qrels, "1 0 a 2\n1 0 b 1\n1 0 c 0\n1 0 d 1\n").unwrap();
    // Relevant: a, b, d (c is judged non-relevant).
    let mut run = String::new();
    for (i, d) in ["a", "c", "b", "x1", "x2", "x3", "d", "x4", "x5", "x6"]
        .iter()
        .enumerate()
    {
        run.push_str(&format!("1 Q0 {d} {} {} mine\n", i + 1, 10 - i));
    }
    std::fs::write(dir.path().join("mine.run"), &run).unwrap();
    let csv = dir.path().join("cmp.csv");
    let out = ok(&[
        "eval",
        "--run",
        s(&dir.path().join("mine.run")),
        "--qrels",
        s(&qrels),
        "--csv",
        s(&csv),
    ]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("mine"), "{table}");
    assert!(table.contains("0.3000"), "{table}");
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("run_tag,mean_r_prec,mean_p_at_10"));
    // R-Prec: 2 of the top 3 are relevant.
    assert_eq!(lines.next(), Some("mine,0.6667,0.3000"));
}

#[test]
fn eval_half_precision() {
    let dir = TempDir::new().unwrap();
    let qrels = dir.path().join("q");
    let mut q = String::new();
    let mut r = String::new();
    for i in 0..10 {
        q.push_str(&format!("7 0 d{i} {}\n", u8::from(i % 2 == 0)));
        r.push_str(&format!("7 Q0 d{i} {} {}.0 half\n", i + 1, 20 - i));
    }
    std::fs::write(&qrels, q).unwrap();
    std::fs::write(dir.path().join("half.run"), r).unwrap();
    let out = ok(&[
        "eval",
        "--run",
        s(&dir.path().join("half.run")),
        "--qrels",
        s(&qrels),
    ]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("0.5000"));
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for name in ["a", "b"] {
        ok(&[
            "synth",
            "--seed",
            "3",
            "--docs",
            "80",
            "--topic-count",
            "4",
            "--out",
            s(&dir.path().join(name)),
        ]);
    }
    for f in ["corpus.jsonl", "topics.jsonl", "qrels.txt"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn rerank_without_models_keeps_first_stage_order() {
    let (dir, data) = fixture(120, 4);
    let idx = dir.path().join("idx");
    let topics = data.join("topics.jsonl");
    let first = dir.path().join("first.run");
    let second = dir.path().join("second.run");
    ok(&[
        "search",
        "--index",
        s(&idx),
        "--topics",
        s(&topics),
        "--out",
        s(&first),
        "--k",
        "50",
        "--tag",
        "t",
    ]);
    ok(&[
        "rerank",
        "--index",
        s(&idx),
        "--topics",
        s(&topics),
        "--out",
        s(&second),
        "--k",
        "50",
        "--no-rel",
        "--no-abs",
        "--tag",
        "t",
    ]);
    let a = std::fs::read_to_string(first).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read_to_string(second).unwrap());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&[
        "index",
        "--corpus",
        s(&missing),
        "--index",
        s(&dir.path().join("i")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));

    assert_eq!(run(&["index", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    assert_eq!(
        run(&[
            "index",
            "--corpus",
            s(&bad),
            "--index",
            s(&dir.path().join("i"))
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn abs_requires_ext() {
    let (dir, data) = fixture(60, 3);
    let out = run(&[
        "train",
        "abs",
        "--corpus",
        s(&data.join("corpus.jsonl")),
        "--topics",
        s(&data.join("topics.jsonl")),
        "--qrels",
        s(&data.join("qrels.txt")),
        "--out",
        s(&dir.path().join("abs.ckpt")),
        "--profile",
        "desk",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("EXT checkpoint"));
}

#[test]
fn config_file_supplies_defaults() {
    let (dir, data) = fixture(60, 3);
    let cfg = dir.path().join("search.cfg");
    std::fs::write(&cfg, "k = 3\ntag = fromcfg\n").unwrap();
    let out = dir.path().join("r.run");
    ok(&[
        "search",
        "--config",
        s(&cfg),
        "--index",
        s(&dir.path().join("idx")),
        "--topics",
        s(&data.join("topics.jsonl")),
        "--out",
        s(&out),
        "--tag",
        "flag",
    ]);
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.lines().all(|l| l.ends_with(" flag")));
    assert!(text
        .lines()
        .all(|l| l.split(' ').nth(3).unwrap().parse::<usize>().unwrap() <= 3));
}

/// Train every model for a handful of steps, resume one, and rerank.
#[test]
fn desk_pipeline_smoke() {
    let (dir, data) = fixture(60, 3);
    let p = |n: &str| dir.path().join(n);
    let common = |out: &Path| -> Vec<String> {
        [
            "--corpus",
            s(&data.join("corpus.jsonl")),
            "--topics",
            s(&data.join("topics.jsonl")),
            "--qrels",
            s(&data.join("qrels.txt")),
            "--out",
            s(out),
            "--profile",
            "desk",
            "--steps",
            "3",
            "--batch",
            "2",
            "--eval-every",
            "2",
            "--max-tokens",
            "64",
        ]
        .map(String::from)
        .to_vec()
    };

    let mut a = vec!["train".to_string(), "rel".into()];
    a.extend(common(&p("rel.ckpt")));
    ok(&strs(&a));
    let log = std::fs::read_to_string(p("rel.ckpt.log.csv")).unwrap();
    assert!(log.starts_with("step,loss,lr,val_P,val_R,val_F1"));

    let mut a = vec!["train".to_string(), "rel".into()];
    a.extend(common(&p("rel2.ckpt")));
    a.extend(["--resume".into(), s(&p("rel.ckpt")).into()]);
    ok(&strs(&a));
    let log = std::fs::read_to_string(p("rel2.ckpt.log.csv")).unwrap();
    let last_step: u64 = log
        .lines()
        .last()
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(last_step, 6);

    let mut a = vec!["train".to_string(), "ext".into()];
    a.extend(common(&p("ext.ckpt")));
    ok(&strs(&a));

    ok(&[
        "embed-train",
        "--corpus",
        s(&data.join("corpus.jsonl")),
        "--out",
        s(&p("vec.txt")),
        "--dim",
        "16",
        "--epochs",
        "1",
    ]);

    let mut a = vec!["train".to_string(), "abs".into()];
    a.extend(common(&p("abs.ckpt")));
    a.extend(
        [
            "--ext",
            s(&p("ext.ckpt")),
            "--embeddings",
            s(&p("vec.txt")),
            "--max-target",
            "8",
        ]
        .map(String::from),
    );
    ok(&strs(&a));

    let run = p("full.run");
    ok(&[
        "rerank",
        "--index",
        s(&p("idx")),
        "--corpus",
        s(&data.join("corpus.jsonl")),
        "--topics",
        s(&data.join("topics.jsonl")),
        "--out",
        s(&run),
        "--k",
        "10",
        "--rel",
        s(&p("rel2.ckpt")),
        "--ext",
        s(&p("ext.ckpt")),
        "--abs",
        s(&p("abs.ckpt")),
        "--embeddings",
        s(&p("vec.txt")),
        "--max-target",
        "8",
        "--debug-dir",
        s(&p("debug")),
    ]);
    let text = std::fs::read_to_string(&run).unwrap();
    assert!(!text.is_empty());
    assert_eq!(std::fs::read_dir(p("debug")).unwrap().count(), 3);

    let doc = text
        .lines()
        .next()
        .unwrap()
        .split(' ')
        .nth(2)
        .unwrap()
        .to_string();
    let corpus = s(&data.join("corpus.jsonl")).to_string();
    ok(&[
        "export",
        "heatmap",
        "--ext",
        s(&p("ext.ckpt")),
        "--corpus",
        &corpus,
        "--doc",
        &doc,
        "--out",
        s(&p("h.csv")),
    ]);
    ok(&[
        "export",
        "attention",
        "--abs",
        s(&p("abs.ckpt")),
        "--corpus",
        &corpus,
        "--doc",
        &doc,
        "--facet",
        "disease",
        "--out",
        s(&p("a.csv")),
        "--max-target",
        "8",
    ]);
    assert!(std::fs::metadata(p("h.csv")).unwrap().len() > 0);
    assert!(std::fs::metadata(p("a.csv")).unwrap().len() > 0);
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}
