use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stagerank")
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn stagerank(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = stagerank(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn indexes() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for g in ["abstract", "fulltext", "paragraph"] {
        let out = dir.path().join(format!("{g}.idx"));
        let stdout = ok(&[
            "index",
            "--corpus",
            &s(&fixture("corpus.jsonl")),
            "--granularity",
            g,
            "--out",
            &s(&out),
        ]);
        assert!(stdout.starts_with("N="), "{stdout}");
    }
    dir
}

fn golden(variant: &str) -> String {
    std::fs::read_to_string(fixture(&format!("golden/{variant}.run"))).unwrap()
}

fn run(dir: &Path, variant: &str, extra: &[&str]) -> Output {
    let topics = s(&fixture("topics.jsonl"));
    let idx = s(dir);
    let mut args = vec![
        "run",
        "--variant",
        variant,
        "--topics",
        &topics,
        "--indexes",
        &idx,
    ];
    args.extend_from_slice(extra);
    stagerank(&args)
}

fn stdout(out: Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(stagerank(&[]).status.code(), Some(1));
    assert_eq!(stagerank(&["--help"]).status.code(), Some(0));
    assert_eq!(stagerank(&["run", "--topics", "x"]).status.code(), Some(1));
    let missing = stagerank(&[
        "index",
        "--corpus",
        "/nonexistent/corpus.jsonl",
        "--granularity",
        "abstract",
        "--out",
        "/tmp/x.idx",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/corpus.jsonl"));

    let dir = indexes();
    let bad_run = dir.path().join("bad.run");
    std::fs::write(&bad_run, "1 Q0 a 2 1.0 tag\n").unwrap();
    let out = stagerank(&[
        "eval",
        "--run",
        &s(&bad_run),
        "--qrels",
        &s(&fixture("qrels_round1.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(run(dir.path(), "t5_lr", &[]).status.code(), Some(1));
    assert_eq!(run(dir.path(), "nope", &[]).status.code(), Some(1));
    assert_eq!(
        run(dir.path(), "monot5", &["--scorer", "exec:false"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn exec_scorer_matches_in_process_reference() {
    let dir = indexes();
    let cmd = format!(
        "exec:{} scorer --index {}",
        bin(),
        s(&dir.path().join("abstract.idx"))
    );
    let out = stdout(run(
        dir.path(),
        "monot5",
        &["--scorer", &cmd, "--jobs", "1"],
    ));
    assert_eq!(out, golden("monot5"));
    let out = stdout(run(dir.path(), "fusion2", &["--extractor", &cmd]));
    assert_eq!(out, golden("fusion2"));
}

#[test]
fn tcp_scorer_matches_in_process_reference() {
    let dir = indexes();
    let mut child = Command::new(bin())
        .args([
            "scorer",
            "--index",
            &s(&dir.path().join("abstract.idx")),
            "--listen",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();
    let out = run(
        dir.path(),
        "duot5",
        &["--scorer", &format!("tcp:{addr}"), "--connections", "2"],
    );
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(stdout(out), golden("duot5"));
}

#[test]
fn flags_override_config() {
    let dir = indexes();
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "# fixture run\nvariant = fusion2\ntag = fromconfig\ndepth = 5\njobs = 1\n",
    )
    .unwrap();
    let out = stdout(run(dir.path(), "fusion1", &["--config", &s(&config)]));
    let expected = stdout(run(
        dir.path(),
        "fusion1",
        &["--tag", "fromconfig", "--depth", "5"],
    ));
    assert!(expected.lines().all(|l| l.ends_with(" fromconfig")));
    assert_eq!(expected.lines().count(), 25);
    assert_eq!(out, expected);

    std::fs::write(&config, "variant = fusion2\ncolour = blue\n").unwrap();
    let out = run(dir.path(), "fusion1", &["--config", &s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn eval_and_fuse() {
    let dir = indexes();
    let run_file = dir.path().join("mono.run");
    std::fs::write(&run_file, golden("monot5")).unwrap();
    let qrels = s(&fixture("qrels_round1.txt"));
    let table = ok(&["eval", "--run", &s(&run_file), "--qrels", &qrels]);
    assert!(table.lines().next().unwrap().contains("ndcg@10"), "{table}");
    assert_eq!(
        table.lines().filter(|l| l.starts_with("all")).count(),
        1,
        "{table}"
    );

    let json = ok(&[
        "eval",
        "--run",
        &s(&run_file),
        "--qrels",
        &qrels,
        "--metrics",
        "map,p@5",
        "--format",
        "json",
    ]);
    for line in json.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("map").is_some() && v.get("p@5").is_some() && v.get("ndcg@10").is_none());
    }

    let fused = ok(&[
        "fuse",
        "--runs",
        &s(&run_file),
        &s(&run_file),
        "--tag",
        "both",
        "--depth",
        "10",
    ]);
    let mono = golden("monot5");
    let mono_top: Vec<&str> = golden_top(&mono);
    let fused_top: Vec<&str> = golden_top(&fused);
    assert_eq!(fused_top, mono_top);
}

fn golden_top(run: &str) -> Vec<&str> {
    run.lines()
        .filter(|l| l.split(' ').nth(3).unwrap().parse::<usize>().unwrap() <= 10)
        .map(|l| l.split(' ').nth(2).unwrap())
        .collect()
}
