use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hrl-dasc"))
}

fn shipped() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic-200")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(err.lines().count(), 1, "{err}");
    err
}

const SMALL: &[&str] = &[
    "--set",
    "dim=6",
    "--set",
    "pretrain_low_epochs=1",
    "--set",
    "pretrain_high_epochs=1",
    "--set",
    "policy_epochs=2",
];

fn train_small(out: &Path, seed: u64) {
    let corpus = shipped().join("corpus.jsonl");
    let seed = seed.to_string();
    let mut args = vec!["train", "--corpus", s(&corpus), "--out", s(out), "--seed", &seed];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn eval_into(run_dir: &Path, out: &Path, extra: &[&str]) -> Output {
    let corpus = shipped().join("corpus.jsonl");
    let ckpt = run_dir.join("model.ckpt");
    let mut args = vec!["eval", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--out", s(out)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn usage_errors_exit_with_code_two() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error[usage]:"));

    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--corpus", "/no/such/corpus.jsonl", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error[usage]:"));

    let corpus = shipped().join("corpus.jsonl");
    let o = run(&["train", "--corpus", s(&corpus), "--out", s(dir.path()), "--set", "dimension=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("config"));

    let o = run(&["train", "--corpus", s(&corpus), "--out", s(dir.path()), "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("aspects.txt"), "room room0\n").unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    fs::write(
        &corpus,
        "{\"aspects_file\":\"aspects.txt\",\"num_classes\":5,\"split_seed\":1}\n{\"id\":\"a\",\"text\":\"ok\",\"aspects\":[{\"name\":\"room\",\"rating\":9}]}\n",
    )
    .unwrap();
    let o = run(&["train", "--corpus", s(&corpus), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(3));
    let line = stderr_line(&o);
    assert!(line.starts_with("error[data]:") && line.contains(":2:"), "{line}");
}

#[test]
fn generator_reproduces_the_shipped_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = shipped().join("synthetic.toml");
    let o = run(&["gen", "--spec", s(&spec), "--out", s(dir.path())]);
    assert!(o.status.success());
    for name in ["corpus.jsonl", "aspects.txt", "synthetic.toml"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(shipped().join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    train_small(&a, 3);
    train_small(&b, 3);
    train_small(&c, 4);
    for name in ["model.ckpt", "rewards.jsonl", "losses.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(c.join("model.ckpt")).unwrap());

    for mode in ["--greedy", "--sample"] {
        let (ea, eb) = (dir.path().join(format!("ea{mode}")), dir.path().join(format!("eb{mode}")));
        assert!(eval_into(&a, &ea, &[mode]).status.success());
        assert!(eval_into(&b, &eb, &[mode, "--threads", "3"]).status.success());
        for name in ["metrics.jsonl", "summary.txt"] {
            assert_eq!(fs::read(ea.join(name)).unwrap(), fs::read(eb.join(name)).unwrap(), "{name}");
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["config"]["dim"], 6);
    assert!(manifest["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn eval_rejects_mismatched_dims() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    train_small(&run_dir, 1);
    let o = eval_into(&run_dir, &dir.path().join("ev"), &["--set", "dim=7"]);
    assert_eq!(o.status.code(), Some(3));
    let line = stderr_line(&o);
    assert!(line.starts_with("error[data]:") && line.contains("dim"), "{line}");

    let ok = eval_into(&run_dir, &dir.path().join("ev2"), &["--set", "dim=6", "--split", "dev"]);
    assert!(ok.status.success());
    let bad = eval_into(&run_dir, &dir.path().join("ev3"), &["--split", "validation"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn viz_writes_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    train_small(&run_dir, 2);
    let corpus = shipped().join("corpus.jsonl");
    let first = fs::read_to_string(&corpus).unwrap();
    let doc: serde_json::Value = serde_json::from_str(first.lines().nth(1).unwrap()).unwrap();
    let id = doc["id"].as_str().unwrap();
    let aspect = doc["aspects"][0]["name"].as_str().unwrap();
    let out = dir.path().join("viz");
    let ckpt = run_dir.join("model.ckpt");
    let args = ["viz", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--doc", id, "--aspect", aspect, "--out", s(&out)];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.starts_with(&format!("document {id} | aspect {aspect}")));
    assert!(fs::read_to_string(out.join("report.html")).unwrap().contains("<ol>"));

    let o = run(&["viz", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--doc", "missing", "--aspect", aspect, "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_training_on_shipped_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = shipped().join("corpus.jsonl");
    let o = run(&["train", "--corpus", s(&corpus), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("model.ckpt").exists());
    let rewards = fs::read_to_string(dir.path().join("rewards.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = rewards.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    for l in &lines {
        assert!(l["high"].as_f64().unwrap().is_finite());
        assert!(l["low"].as_f64().unwrap().is_finite());
    }
}
