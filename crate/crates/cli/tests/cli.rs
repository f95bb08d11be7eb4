//! End-to-end tests of the command surface: file formats, exit codes, and
//! idempotence, driven through the real binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_audiohash"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

/// Builds a tiny trained pipeline under `dir` and returns the artifact paths.
fn build_pipeline(dir: &Path, bits: &str) -> (String, String, String, String) {
    let corpus = dir.join("corpus").to_string_lossy().into_owned();
    let feats = dir.join("feats.afea").to_string_lossy().into_owned();
    let ckpt = dir.join("model.anet").to_string_lossy().into_owned();
    let index = dir.join("codes.aidx").to_string_lossy().into_owned();

    assert_code(
        &run(&[
            "synth", "--out", &corpus, "--classes", "3", "--per-class", "6", "--duration", "0.8",
            "--seed", "7",
        ]),
        0,
    );
    assert_code(
        &run(&["features", "--manifest", &format!("{corpus}/manifest.csv"), "--out", &feats]),
        0,
    );
    assert_code(
        &run(&[
            "train", "--features", &feats, "--out", &ckpt, "--bits", bits, "--epochs", "3",
            "--batch-size", "8", "--arch", "tiny", "--seed", "7",
        ]),
        0,
    );
    assert_code(
        &run(&["index", "--checkpoint", &ckpt, "--features", &feats, "--out", &index]),
        0,
    );
    (corpus, feats, ckpt, index)
}

#[test]
fn full_pipeline_runs_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, feats, ckpt, index) = build_pipeline(tmp.path(), "16");

    // synth produced classes*per_class clips plus the manifest
    let wavs = std::fs::read_dir(&corpus)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav")
        })
        .count();
    assert_eq!(wavs, 18);
    let manifest = std::fs::read_to_string(format!("{corpus}/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 19); // header + one row per clip
    assert!(manifest.lines().next().unwrap() == "path,label");

    // same seed regenerates a byte-identical corpus
    let corpus2 = tmp.path().join("corpus2").to_string_lossy().into_owned();
    assert_code(
        &run(&[
            "synth", "--out", &corpus2, "--classes", "3", "--per-class", "6", "--duration",
            "0.8", "--seed", "7",
        ]),
        0,
    );
    let a = std::fs::read(format!("{corpus}/class01_002.wav")).unwrap();
    let b = std::fs::read(format!("{corpus2}/class01_002.wav")).unwrap();
    assert_eq!(a, b);

    // re-running index produces a byte-identical file
    let index2 = tmp.path().join("codes2.aidx").to_string_lossy().into_owned();
    assert_code(
        &run(&["index", "--checkpoint", &ckpt, "--features", &feats, "--out", &index2]),
        0,
    );
    assert_eq!(std::fs::read(&index).unwrap(), std::fs::read(&index2).unwrap());

    // query: rank 1 sits at distance 0 and the queried clip is among the
    // distance-0 results (clips of one class may share a code)
    let out = run(&[
        "query", "--index", &index, "--checkpoint", &ckpt, "--audio",
        &format!("{corpus}/class00_001.wav"), "--k", "5",
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "rank,id,label,distance");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    assert_eq!(first[3], "0");
    assert!(
        text.lines().skip(1).any(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[1] == "class00_001" && f[3] == "0"
        }),
        "query clip missing from its own distance-0 results:\n{text}"
    );

    // eval prints the summary CSV on stdout and honors --report/--per-query
    let report = tmp.path().join("report.csv").to_string_lossy().into_owned();
    let per_query = tmp.path().join("per_query.csv").to_string_lossy().into_owned();
    let out = run(&[
        "eval", "--index", &index, "--checkpoint", &ckpt, "--features", &feats, "--protocol",
        "standard", "--k", "5", "--report", &report, "--per-query", &per_query,
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.starts_with("# protocol,standard\nmetric,bits,k,value\n"));
    assert!(text.contains("map,16,5,"));
    assert!(text.contains("map,16,all,"));
    assert!(text.contains("radius_precision,16,2,"));
    assert_eq!(std::fs::read_to_string(&report).unwrap(), text);
    let pq = std::fs::read_to_string(&per_query).unwrap();
    assert!(pq.starts_with("query_id,ap,precision_at_k,radius2_precision\n"));
    assert_eq!(pq.lines().count(), 1 + 3); // header + one row per query (20% of 6 per class)
}

#[test]
fn zero_shot_eval_reports_class_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let (_corpus, feats, ckpt, index) = build_pipeline(tmp.path(), "16");
    let out = run(&[
        "eval", "--index", &index, "--checkpoint", &ckpt, "--features", &feats, "--protocol",
        "zero-shot", "--zero-shot-fraction", "0.34", "--k", "5",
    ]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("# protocol,zero-shot"));
    assert!(text.contains("# seen_classes,"));
    assert!(text.contains("# unseen_classes,"));
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["nonsense"]);
    assert_code(&out, 1);
    // k = 0 is rejected as usage
    let out = run(&[
        "query", "--index", "x.aidx", "--checkpoint", "y.anet", "--audio", "z.wav", "--k", "0",
    ]);
    assert_code(&out, 1);
    // --bits outside {16,32,64,128} is rejected at the flag level
    let feats = tmp.path().join("none.afea").to_string_lossy().into_owned();
    let out = run(&["train", "--features", &feats, "--out", "m.anet", "--bits", "48"]);
    assert_code(&out, 1);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();

    // manifest naming a missing file reports the row
    let manifest = tmp.path().join("manifest.csv");
    std::fs::write(&manifest, "path,label\nmissing.wav,dog\n").unwrap();
    let out = run(&[
        "features", "--manifest", &manifest.to_string_lossy(), "--out",
        &tmp.path().join("x.afea").to_string_lossy(),
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("row 1"), "stderr: {}", stderr(&out));

    // config-file bits outside the supported set is a data error
    let (_corpus, feats, ckpt, index) = build_pipeline(tmp.path(), "16");
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "bits = 48\n").unwrap();
    let out = run(&[
        "train", "--features", &feats, "--out",
        &tmp.path().join("m2.anet").to_string_lossy(), "--config", &bad.to_string_lossy(),
    ]);
    assert_code(&out, 2);

    // checkpoint/index bit-length mismatch is reported explicitly
    let ckpt32 = tmp.path().join("model32.anet").to_string_lossy().into_owned();
    assert_code(
        &run(&[
            "train", "--features", &feats, "--out", &ckpt32, "--bits", "32", "--epochs", "1",
            "--batch-size", "8", "--arch", "tiny", "--seed", "7",
        ]),
        0,
    );
    let out = run(&[
        "query", "--index", &index, "--checkpoint", &ckpt32, "--audio", "whatever.wav", "--k",
        "3",
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("mismatch"), "stderr: {}", stderr(&out));

    // window-mode mismatch between checkpoint and archive
    let single = tmp.path().join("single.afea").to_string_lossy().into_owned();
    let corpus_manifest = tmp.path().join("corpus/manifest.csv");
    assert_code(
        &run(&[
            "features", "--manifest", &corpus_manifest.to_string_lossy(), "--out", &single,
            "--multi-window", "false",
        ]),
        0,
    );
    let out = run(&["index", "--checkpoint", &ckpt, "--features", &single, "--out",
        &tmp.path().join("bad.aidx").to_string_lossy()]);
    assert_code(&out, 2);
}

#[test]
fn single_window_pipeline_trains() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus").to_string_lossy().into_owned();
    let feats = tmp.path().join("single.afea").to_string_lossy().into_owned();
    let ckpt = tmp.path().join("model.anet").to_string_lossy().into_owned();
    assert_code(
        &run(&[
            "synth", "--out", &corpus, "--classes", "2", "--per-class", "4", "--duration",
            "0.6", "--seed", "3",
        ]),
        0,
    );
    assert_code(
        &run(&[
            "features", "--manifest", &format!("{corpus}/manifest.csv"), "--out", &feats,
            "--multi-window", "false",
        ]),
        0,
    );
    assert_code(
        &run(&[
            "train", "--features", &feats, "--out", &ckpt, "--bits", "16", "--epochs", "1",
            "--batch-size", "4", "--arch", "tiny", "--multi-window", "false", "--seed", "3",
        ]),
        0,
    );
    assert!(std::fs::metadata(&ckpt).is_ok());
}
