use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mclnn::features::encode_wav;

fn mclnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mclnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TOY_CONFIG: &str = r#"{
  "order": 1,
  "layers": [{"hidden": 8, "bandwidth": 20, "overlap": -5}],
  "extra_frames": 2,
  "dense": [6],
  "classes": ["high", "low"],
  "training": {"batch_size": 32, "max_epochs": 3, "patience": 2}
}"#;

fn tone(freq: f64, seconds: f64, phase: f64) -> Vec<f64> {
    let n = (22050.0 * seconds) as usize;
    (0..n).map(|i| 0.4 * (2.0 * PI * freq * i as f64 / 22050.0 + phase).sin()).collect()
}

/// Three folds of low (300 Hz) and high (4 kHz) tones, written as wav files
/// with a manifest.
fn toy_dataset(root: &Path) {
    let mut manifest = String::from("path,fold,label\n");
    for fold in 1..=3 {
        for (label, freq) in [("low", 300.0), ("high", 4000.0)] {
            for k in 0..2 {
                let rel = format!("fold{fold}/{label}{k}.wav");
                let path = root.join(&rel);
                fs::create_dir_all(path.parent().unwrap()).unwrap();
                let samples = tone(freq * (1.0 + 0.05 * k as f64), 0.4, fold as f64);
                fs::write(&path, encode_wav(&[samples], 22050)).unwrap();
                manifest.push_str(&format!("{rel},{fold},{label}\n"));
            }
        }
    }
    fs::write(root.join("manifest.csv"), manifest).unwrap();
    fs::write(root.join("config.json"), TOY_CONFIG).unwrap();
}

fn featurize(root: &Path) {
    let out = mclnn(&[
        "featurize",
        "--manifest",
        root.join("manifest.csv").to_str().unwrap(),
        "--audio-root",
        root.to_str().unwrap(),
        "--cache",
        root.join("cache").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train(root: &Path, fold: &str, out: &Path) -> Output {
    mclnn(&[
        "train",
        "--config",
        root.join("config.json").to_str().unwrap(),
        "--cache",
        root.join("cache").to_str().unwrap(),
        "--test-fold",
        fold,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn dump_mask_prints_golden_pattern() {
    let out = mclnn(&["dump-mask", "--l", "9", "--e", "8", "--bw", "3", "--ov", "-1"]);
    assert!(out.status.success());
    assert_eq!(
        stdout(&out),
        "10010010\n10010000\n10000001\n00001001\n01001001\n01001000\n01000000\n00000100\n00100100\n"
    );
}

#[test]
fn dump_mask_rejects_bad_spec() {
    let out = mclnn(&["dump-mask", "--l", "9", "--e", "8", "--bw", "3", "--ov", "3"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_predict_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    toy_dataset(root);
    featurize(root);

    let a = root.join("a.mclnn");
    let b = root.join("b.mclnn");
    for path in [&a, &b] {
        let out = train(root, "1", path);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let history = fs::read_to_string(root.join("a.mclnn.history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_accuracy\n"));
    assert!(root.join("a.mclnn.standardizer.json").exists());

    let out = mclnn(&[
        "predict",
        "--model",
        a.to_str().unwrap(),
        "--wav",
        root.join("fold1/high0.wav").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    let label = lines.next().unwrap();
    assert!(label == "high" || label == "low");
    let total: f64 = lines.map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9, "{text}");
}

#[test]
fn test_fold_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    toy_dataset(root);
    featurize(root);
    let out = train(root, "4", &root.join("m.mclnn"));
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test fold 4"));
}

#[test]
fn evaluate_uses_only_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    toy_dataset(root);
    featurize(root);
    // With the audio gone, evaluation must still work from the cache alone.
    for fold in 1..=3 {
        fs::remove_dir_all(root.join(format!("fold{fold}"))).unwrap();
    }
    let run = |name: &str| {
        let report = root.join(name);
        let out = mclnn(&[
            "--jobs",
            "2",
            "evaluate",
            "--config",
            root.join("config.json").to_str().unwrap(),
            "--cache",
            root.join("cache").to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("mean accuracy"));
        fs::read(report).unwrap()
    };
    let first = run("r1.json");
    assert_eq!(first, run("r2.json"));
    let json = String::from_utf8(first).unwrap();
    assert!(json.contains("\"mean_accuracy\"") && json.contains("\"confusion\""));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let missing = mclnn(&[
        "featurize",
        "--manifest",
        root.join("nope.csv").to_str().unwrap(),
        "--audio-root",
        ".",
        "--cache",
        root.join("c").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(3));

    fs::write(root.join("dup.csv"), "path,fold,label\na.wav,1,x\na.wav,2,x\n").unwrap();
    let dup = mclnn(&[
        "featurize",
        "--manifest",
        root.join("dup.csv").to_str().unwrap(),
        "--audio-root",
        ".",
        "--cache",
        root.join("c").to_str().unwrap(),
    ]);
    assert_eq!(dup.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&dup.stderr).contains("a.wav"));

    fs::write(root.join("bad.json"), r#"{"layers": [{"hidden": 4, "bandwidth": 20, "overlap": 25}]}"#).unwrap();
    fs::create_dir_all(root.join("cache")).unwrap();
    let bad = mclnn(&[
        "train",
        "--config",
        root.join("bad.json").to_str().unwrap(),
        "--cache",
        root.join("cache").to_str().unwrap(),
        "--test-fold",
        "1",
        "--out",
        root.join("m").to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("layers[0]"));

    assert_eq!(mclnn(&["train"]).status.code(), Some(2));
}
