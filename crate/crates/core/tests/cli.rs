use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn teeguard() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teeguard"))
}

fn run(args: &[&str]) -> Output {
    teeguard().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/trace")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn missing_corpus_names_the_path() {
    let o = run(&["train", "--corpus", "/nonexistent/corpus.tsv", "-o", "/tmp/never.tgm"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/corpus.tsv"), "{}", stderr(&o));
}

#[test]
fn retraining_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    let corpus = corpus.to_str().unwrap();
    assert!(run(&["corpus", "--count", "200", "--seed", "4", "-o", corpus]).status.success());
    let mut models = Vec::new();
    for name in ["a.tgm", "b.tgm"] {
        let out = dir.path().join(name);
        let o = run(&["train", "--corpus", corpus, "-o", out.to_str().unwrap(), "--epochs", "30", "--seed", "9"]);
        assert!(o.status.success(), "{}", stderr(&o));
        models.push(std::fs::read(&out).unwrap());
        let loss = std::fs::read_to_string(format!("{}.loss", out.display())).unwrap();
        assert_eq!(loss.lines().count(), 30);
    }
    assert_eq!(models[0], models[1]);
    assert_eq!(&models[0][..4], b"TGM1");
}

#[test]
fn trace_report_for_record_task() {
    let o = run(&[
        "trace",
        "--inventory",
        &fixture("inventory.txt"),
        "--task",
        "record",
        &fixture("record.trace"),
        &fixture("playback.trace"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("[stats] inventory=12 required=7 excluded=5 ratio=0.4167"), "{text}");
    assert!(text.contains("CFG_EXCL_I2S_WRITE"));
}

#[test]
fn trace_unknown_task_fails() {
    let o = run(&["trace", "--inventory", &fixture("inventory.txt"), "--task", "nope", &fixture("record.trace")]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn pipeline_writes_metrics_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.json");
    let log = dir.path().join("r.log");
    let o = run(&[
        "pipeline",
        "--utterances",
        "30",
        "--seed",
        "3",
        "--metrics-out",
        metrics.to_str().unwrap(),
        "--redaction-log",
        log.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["processed"], 30);
    assert_eq!(
        m["switches"].as_u64().unwrap(),
        2 * m["forwarded"].as_u64().unwrap()
    );
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 30);
}

#[test]
fn pipeline_rejects_bad_threshold() {
    let o = run(&["pipeline", "--threshold", "1.5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config stage"), "{}", stderr(&o));
}

#[test]
fn serve_then_pipeline_then_second_bind_fails() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump.txt");
    let mut server = teeguard()
        .args(["serve", "--bind", "127.0.0.1:0", "--until", "1000000", "--dump", dump.to_str().unwrap()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").unwrap().to_string();

    let o = run(&["serve", "--bind", &addr]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bind"), "{}", stderr(&o));

    let o = run(&["pipeline", "--utterances", "20", "--endpoint", &addr]);
    assert!(o.status.success(), "{}", stderr(&o));
    server.kill().unwrap();
    server.wait().unwrap();
}
