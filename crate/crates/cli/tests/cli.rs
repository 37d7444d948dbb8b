use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedrewind"))
}

fn blob_args(out: &std::path::Path) -> Vec<String> {
    [
        "--dataset",
        "blobs",
        "--nodes",
        "3",
        "--rounds",
        "3",
        "--epochs",
        "3",
        "--lambda",
        "0.2",
        "--lr",
        "0.1",
        "--hidden",
        "8",
        "--eval-interval",
        "1",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.to_string_lossy().into_owned()])
    .collect()
}

#[test]
fn run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(blob_args(tmp.path()))
        .args(["--topology", "random", "--rewind", "random-peer"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("FA"));
    let csv = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["rewind_mode"], "random_peer");
    assert!(json["final"]["fa"].is_number());
}

#[test]
fn run_json_round_trips_through_config_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    assert!(bin()
        .args(blob_args(&first))
        .args(["--seed", "4"])
        .output()
        .unwrap()
        .status
        .success());
    let second = tmp.path().join("second");
    let status = bin()
        .arg("--config")
        .arg(first.join("run.json"))
        .arg("--out")
        .arg(&second)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn sweep_prints_and_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(blob_args(tmp.path()))
        .args(["--sweep-alpha", "0.1,1.0"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert_eq!(String::from_utf8_lossy(&out.stdout), summary);
}

#[test]
fn invalid_settings_exit_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(blob_args(tmp.path()))
        .args(["--epochs", "2"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = bin().args(["--topology", "mesh"]).output().unwrap();
    assert!(!out.status.success());

    let out = bin()
        .args(["--dataset", "mnist", "--mnist-dir", "/nonexistent", "--out"])
        .arg(tmp.path().join("x"))
        .env_remove("FEDREWIND_MNIST_DIR")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn mnist_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist");
    let out = bin()
        .args([
            "--subset", "600", "--nodes", "3", "--rounds", "1", "--epochs", "3", "--hidden", "8",
            "--out",
        ])
        .arg(tmp.path())
        .env("FEDREWIND_MNIST_DIR", data)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["mnist_dir"], data);
}
