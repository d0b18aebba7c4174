use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn comedic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comedic")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = comedic(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixture_train_synthesize_plot() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus");
    let made = ok_json(&["make-fixture", "--out", path(&corpus), "--clips", "4", "--case-sentence"]);
    let manifest = made["manifest"].as_str().unwrap().to_string();

    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "profile = \"tiny\"\nseed = 5\nbatch_size = 2\nvalidation_interval = 2\nval_fraction = 0.25\ntest_fraction = 0.0\n",
    )
    .unwrap();
    let run = root.join("run");
    let trained = ok_json(&[
        "train",
        "--config",
        path(&config),
        "--manifest",
        &manifest,
        "--out",
        path(&run),
        "--steps",
        "4",
    ]);
    assert_eq!(trained["step"], 4);
    let ckpt = trained["checkpoint"].as_str().unwrap().to_string();
    let log = std::fs::read_to_string(run.join("loss_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    let resumed = ok_json(&[
        "train", "--manifest", &manifest, "--out", path(&run), "--resume", &ckpt, "--steps", "6",
    ]);
    assert_eq!(resumed["step"], 6);

    let out = root.join("out");
    let phonemes = "uo3 zh e1 n i3 zh ii1 d ao4 b a5";
    let syn = ok_json(&[
        "synthesize",
        "--checkpoint",
        &ckpt,
        "--speaker",
        "B",
        "--phonemes",
        phonemes,
        "--out",
        path(&out),
        "--name",
        "b",
        "--text",
        "--wav",
        "--gl-iterations",
        "2",
    ]);
    assert_eq!(syn["labels"].as_array().unwrap().last().unwrap(), "<spc1>");
    let frames = syn["frames"].as_u64().unwrap();
    let total: u64 = syn["durations"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).sum();
    assert_eq!(frames, total);
    for key in ["mel", "mel_text", "trace", "wav"] {
        assert!(Path::new(syn[key].as_str().unwrap()).exists(), "{key} missing");
    }

    let file = root.join("phonemes.txt");
    std::fs::write(&file, phonemes).unwrap();
    let again = ok_json(&[
        "synthesize", "--checkpoint", &ckpt, "--speaker", "B", "--phonemes", path(&file), "--out", path(&out),
        "--name", "b2", "--seed", "9",
    ]);
    assert_eq!(again["labels"], syn["labels"]);

    let png = root.join("traces.png");
    let plot = ok_json(&[
        "plot-durations",
        "--traces",
        syn["trace"].as_str().unwrap(),
        again["trace"].as_str().unwrap(),
        "--out",
        path(&png),
    ]);
    assert_eq!(plot["rows"], 2);
    assert!(png.exists());

    let cmp = ok_json(&["compare-durations", syn["trace"].as_str().unwrap(), again["trace"].as_str().unwrap()]);
    assert_eq!(cmp["labels"], syn["labels"]);

    let report = root.join("stats.json");
    let stats = comedic(&["stats", "--manifest", &manifest, "--report", path(&report)]);
    assert!(stats.status.success());
    let table = String::from_utf8(stats.stdout).unwrap();
    for speaker in ["A", "B", "C", "D"] {
        assert!(table.lines().any(|l| l.starts_with(speaker)), "{speaker} missing:\n{table}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(report["speakers"].as_array().unwrap().len(), 4);

    let bad = comedic(&[
        "synthesize", "--checkpoint", &ckpt, "--speaker", "B", "--phonemes", "uo3 xx7", "--out", path(&out),
    ]);
    assert!(!bad.status.success());
    let err: Value = serde_json::from_slice(&bad.stderr).expect("stderr is json");
    assert_eq!(err["error"]["kind"], "unknown_label");
    assert!(err["error"]["message"].as_str().unwrap().contains("xx7"));
}

#[test]
fn missing_files_fail_with_a_record() {
    let out = comedic(&["synthesize", "--checkpoint", "/nonexistent.ckpt", "--speaker", "A", "--phonemes", "a1", "--out", "/tmp"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}
