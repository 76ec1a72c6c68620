use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn slidenet(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slidenet"))
        .current_dir(root)
        .env_remove("SLIDENET_OUT")
        .env_remove("RUST_LOG")
        .arg("--out-root")
        .arg("o")
        .args(args)
        .output()
        .expect("spawn slidenet")
}

fn ok(root: &Path, args: &[&str]) -> Output {
    let out = slidenet(root, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Exit status and the single stderr line of a failed run.
fn fails(root: &Path, args: &[&str]) -> (i32, String) {
    let out = slidenet(root, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {err:?}");
    let code = out.status.code().unwrap();
    assert!(lines[0].starts_with("error[E_"), "{err}");
    assert!(lines[0].contains(&format!("exit={code}:")), "{err}");
    (code, lines[0].to_string())
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn synth(root: &Path, n: usize, extra: &[&str]) {
    let n = n.to_string();
    let mut args = vec!["synth", "--n-chips", &n, "--chip-size", "32"];
    args.extend_from_slice(extra);
    ok(root, &args);
}

#[test]
fn synth_writes_chips_and_refuses_to_overwrite() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 10, &["--seed", "17"]);
    let chips = dir.path().join("o/chips");
    let bins = fs::read_dir(&chips)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "bin"))
        .count();
    assert_eq!(bins, 10);
    assert!(chips.join("index.json").exists());
    let prov = json(&chips.join("provenance.json"));
    assert_eq!(prov["config"]["synthetic"]["seed"], 17);
    assert_eq!(prov["config"]["synthetic"]["n_chips"], 10);
    assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);

    let (code, line) = fails(dir.path(), &["synth", "--n-chips", "10"]);
    assert_eq!(code, 2);
    assert!(line.contains("--force"), "{line}");
    synth(dir.path(), 12, &["--force"]);
}

#[test]
fn provenance_replays_the_same_chips() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 6, &["--seed", "9", "--looks", "8"]);
    ok(dir.path(), &["synth", "--config", "o/chips/provenance.json", "--out", "o/again"]);
    for i in 0..6 {
        let name = format!("syn9_{i:05}.bin");
        assert_eq!(
            fs::read(dir.path().join("o/chips").join(&name)).unwrap(),
            fs::read(dir.path().join("o/again").join(&name)).unwrap()
        );
    }
}

#[test]
fn split_is_deterministic_and_validated() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    synth(root, 40, &["--positive-fraction", "0.5"]);
    ok(root, &["split", "--fractions", "0.5,0.2,0.15,0.15", "--seed", "4"]);
    let first = fs::read_to_string(root.join("o/split.csv")).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for line in first.lines().skip(1) {
        *counts.entry(line.split(',').nth(1).unwrap().to_string()).or_insert(0) += 1;
    }
    assert_eq!(counts["pretrain"], 20);
    assert_eq!(counts["seg_train"], 8);
    assert_eq!(counts["validation"], 6);
    assert_eq!(counts["test"], 6);
    assert!(root.join("o/split.provenance.json").exists());

    assert_eq!(fails(root, &["split", "--fractions", "0.5,0.2,0.15,0.15", "--seed", "4"]).0, 2);
    ok(root, &["split", "--fractions", "0.5,0.2,0.15,0.15", "--seed", "4", "--force"]);
    assert_eq!(fs::read_to_string(root.join("o/split.csv")).unwrap(), first);

    assert_eq!(fails(root, &["split", "--fractions", "0.5,0.2,0.15", "--force"]).0, 2);
    assert_eq!(fails(root, &["split", "--fractions", "0.5,0.2,0.15,0.5", "--force"]).0, 2);
    assert_eq!(fails(root, &["split", "--fractions", "0.5,x,0.15,0.15", "--force"]).0, 2);
}

#[test]
fn unbalanced_chips_need_the_balance_flag() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    synth(root, 20, &["--positive-fraction", "0.2"]);
    let (code, line) = fails(root, &["split"]);
    assert_eq!(code, 3);
    assert!(line.starts_with("error[E_DATA]"), "{line}");
    ok(root, &["split", "--balance"]);
    let csv = fs::read_to_string(root.join("o/split.csv")).unwrap();
    let roles: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(roles.len(), 8);
    for (role, n) in [("pretrain", 4), ("seg_train", 2), ("validation", 1), ("test", 1)] {
        assert_eq!(roles.iter().filter(|&&r| r == role).count(), n, "{role}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    fs::write(root.join("bad.json"), r#"{"synthetic": {"n_chips": 4}, "bogus": 1}"#).unwrap();
    let (code, line) = fails(root, &["synth", "--config", "bad.json"]);
    assert_eq!(code, 2);
    assert!(line.contains("bogus"), "{line}");

    fs::write(root.join("broken.json"), "{").unwrap();
    assert_eq!(fails(root, &["synth", "--config", "broken.json"]).0, 2);
    assert_eq!(fails(root, &["synth", "--no-such-flag"]).0, 2);
    assert_eq!(fails(root, &["synth", "--n-chips", "0"]).0, 2);
    assert_eq!(fails(root, &["pretrain", "--max-epochs", "2", "--patience", "5"]).0, 2);
}

#[test]
fn help_lists_every_flag() {
    let dir = TempDir::new().unwrap();
    let top = String::from_utf8(ok(dir.path(), &["--help"]).stdout).unwrap();
    for cmd in ["synth", "split", "pretrain", "train-seg", "ablate", "eval", "report"] {
        assert!(top.contains(cmd), "{cmd} missing from help");
    }
    let cases: [(&str, &[&str]); 7] = [
        ("synth", &["--out", "--n-chips", "--seed", "--chip-size", "--looks", "--contrast", "--positive-fraction"]),
        ("split", &["--chips", "--out", "--fractions", "--seed", "--balance"]),
        (
            "pretrain",
            &["--chips", "--manifest", "--arch", "--max-epochs", "--patience", "--batch-size", "--learning-rate"],
        ),
        ("train-seg", &["--pretrained", "--train-size"]),
        ("ablate", &["--sizes", "--variants", "--pretrained-a", "--pretrained-b", "--jobs"]),
        ("eval", &["--checkpoints", "--pretrained", "--audit"]),
        ("report", &["--run"]),
    ];
    for (cmd, flags) in cases {
        let help = String::from_utf8(ok(dir.path(), &[cmd, "--help"]).stdout).unwrap();
        for flag in flags.iter().chain(&["--config", "--force", "--out-root", "--dtype", "--verbose"]) {
            assert!(help.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn train_evaluate_ablate_and_report() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let quick = ["--arch", "ci", "--chip-size", "32", "--max-epochs", "2", "--patience", "2"];
    synth(root, 60, &["--seed", "2"]);
    ok(root, &["split", "--fractions", "0.4,0.3,0.15,0.15"]);

    let mut args = vec!["pretrain", "--seed", "3"];
    args.extend_from_slice(&quick);
    ok(root, &args);
    let stage1 = root.join("o/pretrain/checkpoint_00.bin");
    assert!(stage1.exists());
    assert!(root.join("o/pretrain/train_log.json").exists());

    let mut args = vec!["train-seg", "--pretrained", "o/pretrain/checkpoint_00.bin", "--train-size", "5"];
    args.extend_from_slice(&quick);
    ok(root, &args);
    let ids: Vec<String> = serde_json::from_value(json(&root.join("o/train-seg/train_chips.json"))).unwrap();
    assert_eq!(ids.len(), 5);

    let out = ok(root, &["eval", "--checkpoints", "o/train-seg", "--pretrained", "o/pretrain/checkpoint_00.bin"]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_checkpoints"], 2);
    assert!(summary["aprc"].as_f64().unwrap() >= 0.0);
    assert!(root.join("o/eval/chip_errors.csv").exists());

    let (code, line) = fails(root, &["eval", "--checkpoints", "o/pretrain", "--out", "o/e2"]);
    assert_eq!(code, 3);
    assert!(line.contains("stage-1"), "{line}");

    let mut args = vec![
        "ablate",
        "--sizes",
        "2,4",
        "--variants",
        "none,pretrain_A",
        "--pretrained-a",
        "o/pretrain/checkpoint_00.bin",
        "--jobs",
        "2",
    ];
    args.extend_from_slice(&quick);
    ok(root, &args);
    let run = root.join("o/ablation");
    let csv = fs::read(run.join("results.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 5);
    ok(root, &args);
    assert_eq!(fs::read(run.join("results.csv")).unwrap(), csv);

    fs::remove_dir_all(run.join("report")).unwrap();
    ok(root, &["report"]);
    for plot in ["aprc_vs_train_size.png", "dl1_all.png", "dcount_empty.png", "dcount_landslide.png"] {
        assert!(run.join("report").join(plot).exists(), "{plot}");
    }
    assert!(json(&run.join("provenance.json"))["seeds"].as_object().is_some_and(|s| !s.is_empty()));
}
