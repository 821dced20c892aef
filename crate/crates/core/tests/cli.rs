use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snorer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snorer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = snorer(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) -> String {
    let corpus = dir.join("corpus");
    ok(&[
        "synth",
        "--out-dir",
        corpus.to_str().unwrap(),
        "--subjects",
        "4",
        "--duration",
        "1.0",
    ]);
    corpus.join("manifest.csv").to_str().unwrap().to_string()
}

#[test]
fn gmm_ubm_train_enroll_evaluate_identify_verify() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = dir.path().join("out");
    let common = [
        "--manifest",
        &manifest,
        "--backend",
        "gmm-ubm",
        "--out-dir",
        out.to_str().unwrap(),
    ];

    let train = ok(&[&["train"], &common[..]].concat());
    assert!(train.contains("ubm.json"));
    ok(&[&["enroll"], &common[..]].concat());
    let summary = ok(&[&["evaluate"], &common[..], &["--threshold", "-40"]].concat());
    assert!(summary.contains("accuracy"));

    for f in [
        "ubm.json",
        "registry.json",
        "report.json",
        "scores.csv",
        "roc.csv",
        "run_train.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["backend"], "gmm-ubm");
    assert_eq!(report["operating_point"]["threshold"], -40.0);
    assert_eq!(report["n_genuine"], 4);
    assert_eq!(report["n_impostor"], 12);

    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "test,s00,s01,s02,s03");
    assert_eq!(scores.lines().count(), 5);
    let roc = fs::read_to_string(out.join("roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,tpr,fpr\n-inf,1,1\n"));
    assert!(roc.trim_end().ends_with("inf,0,0"));

    let wav = dir.path().join("corpus/s02_04.wav");
    let id = ok(&[&["identify", "--wav", wav.to_str().unwrap()], &common[..]].concat());
    assert_eq!(id.lines().next().unwrap(), "s02");
    let accept = ok(&[
        &[
            "verify",
            "--wav",
            wav.to_str().unwrap(),
            "--claim",
            "s02",
            "--threshold",
            "-1e9",
        ],
        &common[..],
    ]
    .concat());
    assert!(accept.starts_with("accept"));
    let reject = ok(&[
        &[
            "verify",
            "--wav",
            wav.to_str().unwrap(),
            "--claim",
            "s02",
            "--threshold",
            "1e9",
        ],
        &common[..],
    ]
    .concat());
    assert!(reject.starts_with("reject"));

    let sweep = ok(&[&["evaluate", "--sweep-k", "2,4"], &common[..]].concat());
    assert_eq!(sweep.lines().count(), 3);
    assert!(out.join("sweep.csv").exists());
}

#[test]
fn dnn_backend_runs_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "manifest = {manifest:?}\nbackend = \"dnn\"\nseed = 3\nout_dir = \"dnn-out\"\n\n[train]\nepochs = 2\nobservation_stride = 4\n"
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    ok(&["train", "--config", cfg]);
    ok(&["enroll", "--config", cfg]);
    ok(&["evaluate", "--config", cfg]);
    let out = dir.path().join("dnn-out");
    let registry: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("registry.json")).unwrap()).unwrap();
    assert_eq!(registry["backend"], "dnn");
    assert_eq!(registry["embeddings"].as_array().unwrap().len(), 4);
    let net: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("network.json")).unwrap()).unwrap();
    assert_eq!(
        net["dims"],
        serde_json::json!([1250, 128, 128, 128, 128, 4])
    );
}

#[test]
fn dump_features_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let wav = dir.path().join("corpus/s00_00.wav");
    let csv = dir.path().join("mfcc.csv");
    ok(&[
        "dump-features",
        "--wav",
        wav.to_str().unwrap(),
        "--output",
        csv.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 25);
    assert_eq!(text.lines().count(), 1 + 98);

    let spec = dir.path().join("spec.csv");
    ok(&[
        "dump-features",
        "--wav",
        wav.to_str().unwrap(),
        "--output",
        spec.to_str().unwrap(),
        "--spectrogram",
    ]);
    let first = fs::read_to_string(&spec).unwrap();
    assert_eq!(first.lines().next().unwrap().split(',').count(), 257);
}

#[test]
fn errors_go_to_stderr_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = snorer(&[
        "train",
        "--manifest",
        missing.to_str().unwrap(),
        "--backend",
        "gmm-ubm",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing file"));
    assert!(out.stdout.is_empty());

    let manifest = synth(dir.path());
    let out_dir = dir.path().join("empty");
    let out = snorer(&[
        "evaluate",
        "--manifest",
        &manifest,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("registry.json"));

    let out = snorer(&["train", "--backend", "svm"]);
    assert!(!out.status.success());
}

#[test]
fn plain_gmm_has_nothing_to_train() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = ok(&[
        "train",
        "--manifest",
        &manifest,
        "--backend",
        "gmm",
        "--out-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(out.contains("no shared model"));
}
