use std::path::Path;
use std::process::{Command, Output};

fn partcount(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partcount")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn json_line(out: &Output) -> serde_json::Value {
    let line = stdout(out).lines().find(|l| !l.starts_with('#')).unwrap().to_string();
    serde_json::from_str(&line).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["evaluate", "--bogus"], &["synth"], &["evaluate", "--aggregate", "median"]] {
        let out = partcount(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
    assert_eq!(partcount(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn missing_input_is_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = partcount(&["ingest", "--annotations", "nowhere.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: io: ") && err.contains("nowhere.json"), "{err}");
}

#[test]
fn malformed_annotations_report_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("annotation.json"), "{\"images\": [}").unwrap();
    let out = partcount(&["ingest"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: parse: "), "{}", stderr(&out));
}

#[test]
fn reference_doc_is_current() {
    let committed = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/cli.md")).unwrap();
    assert_eq!(committed, partcount::cli::reference_markdown(), "regenerate with `partcount doc --out docs/cli.md`");
}

#[test]
fn synth_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let out = partcount(
        &["synth", "--out", ".", "--scenes", "10", "--views", "2", "--count", "4..8", "--size", "160", "--radius", "6,12"],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json_line(&out)["images"], 20);

    let out = partcount(&["ingest", "--split-out", "split.json", "--seed", "3"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    let stats = json_line(&out);
    assert_eq!(stats["scenes"], 10);
    assert_eq!(stats["split"]["train"].as_u64().unwrap() % 2, 0, "views of a scene stay together");

    let out = partcount(&["train", "--epochs", "2", "--image-size", "64", "--learning-rate", "1e-3"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(cwd.join("run/best.ckpt").exists() && cwd.join("run/loss_history.csv").exists());

    for aggregate in ["none", "mean"] {
        let out = partcount(&["evaluate", "--checkpoint", "run/best.ckpt", "--aggregate", aggregate, "--split", "train"], cwd);
        assert!(out.status.success(), "{}", stderr(&out));
        let summary = json_line(&out);
        assert!(summary["mae"].as_f64().unwrap() <= summary["rmse"].as_f64().unwrap() + 1e-12);
        let report = std::fs::read_to_string(cwd.join("eval/report.csv")).unwrap();
        assert!(report.lines().count() > 1);
    }

    let out = partcount(&["infer", "--checkpoint", "run/final.ckpt", "--input", "images/scene0000_angle0.png", "--annotations", "annotation.json"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).lines().any(|l| l.starts_with("# ")));
}
