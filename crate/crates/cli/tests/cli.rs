use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scir")).args(args).output().expect("spawn scir")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = scir(&["gen-synthetic", "--out", path(&data), "--n-docs", "300", "--n-topics", "2", "--relevant", "15"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["corpus.jsonl", "qrels.txt", "topics.tsv", "experiment.toml", "scripts/topic1_user2.jsonl"] {
        assert!(data.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(data.join("qrels.txt")).unwrap().lines().count(), 30);

    let snapshot = dir.path().join("index.scir");
    let out = scir(&["build-index", "--corpus", path(&data.join("corpus.jsonl")), "--out", path(&snapshot)]);
    assert!(out.status.success());
    assert_eq!(&fs::read(&snapshot).unwrap()[..8], b"SCIRIDX1");

    // Run against the snapshot instead of the JSONL corpus, with two seeds.
    let results = dir.path().join("results");
    let out = scir(&[
        "run",
        "-c",
        path(&data.join("experiment.toml")),
        "--corpus",
        path(&snapshot),
        "--seeds",
        "1,2",
        "--output-dir",
        path(&results),
        "--no-traces",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("directional orderings"));
    let csv = fs::read_to_string(results.join("summary.csv")).unwrap();
    // 2 error rates x 12 policies x 2 seeds x 2 topics, plus the header.
    assert_eq!(csv.lines().count(), 2 * 12 * 2 * 2 + 1);
    assert!(!results.join("traces").exists());

    let digest = dir.path().join("digest.txt");
    let out = scir(&["report", path(&results.join("summary.csv")), "--out", path(&digest)]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&digest).unwrap(), fs::read_to_string(results.join("digest.txt")).unwrap());
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "corpus = \"missing.jsonl\"\nqrels = \"q.txt\"\nseeds = [1]\noutput_dir = \"out\"\n[scripts]\nkind = \"files\"\n[scripts.files]\n[grid]\ndol = [\"none\"]\nsok = [\"single\"]\n").unwrap();
    let out = scir(&["run", "-c", path(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    fs::write(&cfg, "not toml [").unwrap();
    assert_eq!(scir(&["run", "-c", path(&cfg)]).status.code(), Some(1));
}

#[test]
fn run_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("corpus.jsonl"),
        "{\"docno\":\"d1\",\"text\":\"hubble telescope\"}\n{\"docno\":\"d2\",\"text\":\"mirror\"}\n",
    )
    .unwrap();
    fs::write(d.join("qrels.txt"), "303 0 d1 1\n").unwrap();
    fs::write(d.join("u1.jsonl"), "{\"user\":1,\"t\":0,\"kind\":\"query\",\"query\":\"hubble\"}\n{\"user\":1,\"t\":5,\"kind\":\"judgment\",\"docno\":\"ANY\"}\n").unwrap();
    fs::write(d.join("u2.jsonl"), "{\"user\":2,\"t\":0,\"kind\":\"query\",\"query\":\"mirror\"}\n").unwrap();
    // Authority-weighted feedback with a static all-zero authority fails at
    // the first judgment; the paired baseline still runs.
    fs::write(
        d.join("exp.toml"),
        r#"
corpus = "corpus.jsonl"
qrels = "qrels.txt"
seeds = [1]
output_dir = "out"

[scripts]
kind = "files"
[scripts.files]
303 = ["u1.jsonl", "u2.jsonl"]

[grid]
dol = ["none"]
sok = ["collaborative_weighted"]

[policy.authority]
static = { 1 = 0.0, 2 = 0.0 }
"#,
    )
    .unwrap();
    let out = scir(&["run", "-c", path(&d.join("exp.toml"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("out/failures.csv").exists());
    let csv = fs::read_to_string(d.join("out/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}
