//! End-to-end runs of the `dynhdp` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn frames_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/frames")
}

fn dynhdp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynhdp"))
        .current_dir(dir)
        .args(args)
        .env_remove("DYNHDP_OUT_DIR")
        .env_remove("DYNHDP_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dynhdp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = dynhdp(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

const SYNTH: &[&str] = &[
    "--seed", "5", "--out-dir", "out", "synth", "--grid", "3", "--train-docs", "8", "--test-docs", "10",
    "--min-len", "8", "--max-len", "15", "--abnormal-fraction", "0.3",
];
const TRAIN: &[&str] = &[
    "--seed", "5", "--out-dir", "out", "train", "--corpus", "out/train.corpus", "--sweeps", "20", "--burn-in",
    "5", "--chains", "2",
];
const SCORE: &[&str] = &[
    "--seed", "5", "--out-dir", "out", "score", "--snapshot", "out/model.snapshot", "--corpus", "out/test.corpus",
    "--sweeps", "12", "--burn-in", "2",
];

/// Runs every subcommand into `dir/out` and returns all output files.
fn pipeline(dir: &Path, threads: &str) -> BTreeMap<String, Vec<u8>> {
    let frames = frames_dir();
    ok(dir, SYNTH);
    ok(dir, &[TRAIN, &["--threads", threads]].concat());
    ok(dir, SCORE);
    ok(dir, &["--out-dir", "out", "eval", "--scores", "out/scores.csv", "--labels", "out/labels.csv"]);
    ok(dir, &["--out-dir", "out", "truth-score", "--truth", "out/truth.txt", "--corpus", "out/test.corpus"]);
    ok(
        dir,
        &["--out-dir", "out", "--threads", threads, "extract", "--frames", frames.to_str().unwrap(), "--clip-length", "10"],
    );
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir.join("out")).unwrap() {
        let path = entry.unwrap().path();
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap());
    }
    files
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let first = pipeline(a.path(), "1");
    let second = pipeline(b.path(), "2");
    for name in [
        "train.corpus", "test.corpus", "truth.txt", "labels.csv", "model.snapshot", "scores.csv",
        "model.updated.snapshot", "roc.csv", "roc.svg", "truth-scores.csv", "frames.corpus",
    ] {
        assert!(first.contains_key(name), "missing {name}");
    }
    for command in ["synth", "score", "eval", "truth-score"] {
        assert!(first.contains_key(&format!("{command}.run-manifest.json")));
    }
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    // thread count is not part of the result, so manifests match too
    for (name, bytes) in &first {
        assert!(bytes == &second[name], "{name} differs between runs");
    }
}

#[test]
fn manifest_replay_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), SYNTH);
    ok(dir.path(), TRAIN);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/train.run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["inputs"][0]["path"], "out/train.corpus");
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let snapshot = fs::read(dir.path().join("out/model.snapshot")).unwrap();

    let replay: Vec<String> = manifest["replay"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .collect();
    assert_eq!(replay[0], "dynhdp");
    fs::remove_file(dir.path().join("out/model.snapshot")).unwrap();
    let args: Vec<&str> = replay[1..].iter().map(String::as_str).collect();
    ok(dir.path(), &args);
    assert_eq!(fs::read(dir.path().join("out/model.snapshot")).unwrap(), snapshot);
}

#[test]
fn missing_corpus_is_an_input_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let err = fails(dir.path(), &["train", "--corpus", "nowhere/train.corpus"], 2);
    assert!(err.contains("nowhere/train.corpus"), "{err}");
}

#[test]
fn missing_required_option_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let err = fails(dir.path(), &["score", "--corpus", "x.corpus"], 2);
    assert!(err.contains("--snapshot"), "{err}");
}

#[test]
fn malformed_corpus_reports_file_and_line() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.corpus"), "V=2 J=2\n0 1\n0 7\n").unwrap();
    let err = fails(dir.path(), &["train", "--corpus", "bad.corpus"], 2);
    assert!(err.contains("bad.corpus") && err.contains("line 3"), "{err}");
}

#[test]
fn vocabulary_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("train.corpus"), "V=3 J=2\n0 1 2\n2 2\n").unwrap();
    fs::write(dir.path().join("test.corpus"), "V=4 J=1\n3 3\n").unwrap();
    ok(dir.path(), &["train", "--corpus", "train.corpus", "--sweeps", "5", "--burn-in", "1"]);
    let err = fails(dir.path(), &["score", "--snapshot", "model.snapshot", "--corpus", "test.corpus"], 3);
    assert!(err.contains("vocabulary"), "{err}");
}

#[test]
fn single_class_labels_exit_4() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("scores.csv"),
        "doc_index,score,defined,label\n0,1.5,true,normal\n1,2.5,true,normal\n",
    )
    .unwrap();
    fails(dir.path(), &["eval", "--scores", "scores.csv"], 4);
}

#[test]
fn label_for_unknown_document_is_rejected() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("scores.csv"),
        "doc_index,score,defined,label\n0,1.5,true,normal\n1,2.5,true,abnormal\n",
    )
    .unwrap();
    fs::write(dir.path().join("labels.csv"), "doc_index,label\n0,normal\n9,abnormal\n").unwrap();
    let err = fails(dir.path(), &["eval", "--scores", "scores.csv", "--labels", "labels.csv"], 2);
    assert!(err.contains("doc_index 9"), "{err}");
}

#[test]
fn eval_prints_auc_and_writes_curve() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("scores.csv"),
        "doc_index,score,defined,label\n0,1.0,true,normal\n1,3.0,true,abnormal\n2,,false,abnormal\n3,2.0,true,normal\n",
    )
    .unwrap();
    let out = ok(dir.path(), &["eval", "--scores", "scores.csv"]);
    assert!(out.contains("AUC 1.0000"), "{out}");
    let roc = fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr\n"));
    assert!(fs::read_to_string(dir.path().join("roc.svg")).unwrap().contains("AUC = 1.0000"));
}

#[test]
fn no_update_leaves_the_snapshot_untouched() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), SYNTH);
    ok(dir.path(), TRAIN);
    let before = fs::read(dir.path().join("out/model.snapshot")).unwrap();
    ok(dir.path(), &[SCORE, &["--no-update"]].concat());
    assert_eq!(fs::read(dir.path().join("out/model.snapshot")).unwrap(), before);
    assert!(!dir.path().join("out/model.updated.snapshot").exists());
    let manifest = fs::read_to_string(dir.path().join("out/score.run-manifest.json")).unwrap();
    assert!(manifest.contains("\"--no-update\""));

    ok(dir.path(), SCORE);
    let updated = fs::read(dir.path().join("out/model.updated.snapshot")).unwrap();
    assert_ne!(updated, before);
}

#[test]
fn empty_test_corpus_gives_header_only_scores() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("train.corpus"), "V=3 J=2\n0 1 2\n2 2\n").unwrap();
    fs::write(dir.path().join("empty.corpus"), "V=3 J=0\n").unwrap();
    ok(dir.path(), &["train", "--corpus", "train.corpus", "--sweeps", "5", "--burn-in", "1"]);
    ok(dir.path(), &["score", "--snapshot", "model.snapshot", "--corpus", "empty.corpus"]);
    assert_eq!(fs::read_to_string(dir.path().join("scores.csv")).unwrap(), "doc_index,score,defined,label\n");
}

#[test]
fn empty_documents_are_scored_undefined() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("train.corpus"), "V=3 J=2\n0 1 2\n2 2\n").unwrap();
    fs::write(dir.path().join("test.corpus"), "V=3 J=2\n\n0 2\n").unwrap();
    ok(dir.path(), &["train", "--corpus", "train.corpus", "--sweeps", "5", "--burn-in", "1"]);
    ok(dir.path(), &["score", "--snapshot", "model.snapshot", "--corpus", "test.corpus"]);
    let scores = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let rows: Vec<&str> = scores.lines().collect();
    assert_eq!(rows[1], "0,,false,unlabeled");
    assert!(rows[2].starts_with("1,") && rows[2].contains(",true,"));
}

#[test]
fn config_file_applies_and_flags_win() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "seed = 3\nout_dir = \"cfg-out\"\n\n[synth]\ngrid = 3\ntrain_docs = 4\ntest_docs = 2\nmin_len = 5\nmax_len = 5\n",
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.toml", "synth", "--train-docs", "6"]);
    let train = fs::read_to_string(dir.path().join("cfg-out/train.corpus")).unwrap();
    assert!(train.starts_with("V=9 J=6\n"), "{}", train.lines().next().unwrap());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("cfg-out/synth.run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["config"]["train_docs"], 6);
    assert_eq!(manifest["config"]["test_docs"], 2);

    // a flag beats the file for global keys too
    ok(dir.path(), &["--config", "run.toml", "--seed", "4", "--out-dir", "flag-out", "synth"]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("flag-out/synth.run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 4);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), "[synth]\ngird = 3\n").unwrap();
    let err = fails(dir.path(), &["--config", "run.toml", "synth"], 2);
    assert!(err.contains("gird"), "{err}");
}

#[test]
fn extract_on_bundled_frames_yields_motion_words() {
    let dir = TempDir::new().unwrap();
    let frames = frames_dir();
    let out = ok(dir.path(), &["extract", "--frames", frames.to_str().unwrap(), "--clip-length", "7"]);
    assert!(out.contains("extracted 7 documents"), "{out}");
    let corpus = fs::read_to_string(dir.path().join("frames.corpus")).unwrap();
    assert!(corpus.starts_with("V=192 J=7\n"));
    assert!(corpus.contains("@word 0 x0y0:right"));
}

#[test]
fn extract_without_frames_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let err = fails(dir.path(), &["extract", "--frames", "empty"], 2);
    assert!(err.contains(".pgm"), "{err}");
}
