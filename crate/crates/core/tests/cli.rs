use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_moses-lab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TWO_TASKS: &str = r#"
[[tasks]]
id = "conv2d_a"
work_gflops = 4.0
bytes_per_unit = 4.0
ideal_log2_tiles = 11.0
ideal_log2_unroll = 2.0

[[tasks]]
id = "pool"
work_gflops = 1.1
bytes_per_unit = 2.0
ideal_log2_tiles = 0.0
ideal_log2_unroll = 5.0
"#;

fn two_tasks(dir: &Path) -> PathBuf {
    let p = dir.join("tasks.toml");
    std::fs::write(&p, TWO_TASKS).unwrap();
    p
}

#[test]
fn ratio_and_threshold_conflict() {
    let out = run(&[
        "tune", "--model", "m.mosm", "--device", "d.toml", "--report", "r.json", "--ratio", "0.5", "--threshold", "0.3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--ratio") && err.contains("--threshold"), "{err}");
}

#[test]
fn missing_device_file_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-dataset", "--device", "/nonexistent/device.toml", "--out", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_ratio_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = two_tasks(dir.path());
    let data = dir.path().join("src.jsonl");
    let model = dir.path().join("m.mosm");
    let server = configs().join("server.toml");
    assert!(run(&["gen-dataset", "--device", s(&server), "--tasks", s(&tasks), "--samples", "40", "--out", s(&data)]).status.success());
    assert!(run(&["pretrain", "--dataset", s(&data), "--tasks", s(&tasks), "--epochs", "1", "--out", s(&model)]).status.success());
    let out = run(&[
        "tune", "--model", s(&model), "--device", s(&configs().join("embedded.toml")), "--tasks", s(&tasks),
        "--report", s(&dir.path().join("r.json")), "--ratio", "1.5", "--no-adversarial",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pretrain_echo_reports_default_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = two_tasks(dir.path());
    let data = dir.path().join("src.jsonl");
    let model = dir.path().join("m.mosm");
    let server = configs().join("server.toml");
    let gen = run(&["gen-dataset", "--device", s(&server), "--tasks", s(&tasks), "--samples", "60", "--out", s(&data)]);
    assert!(gen.status.success());
    let out = run(&["pretrain", "--dataset", s(&data), "--tasks", s(&tasks), "--out", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echo["hyper"]["max_epochs"], 30);
    assert_eq!(echo["hyper"]["learning_rate"], 0.001);
    assert_eq!(echo["epoch_losses"].as_array().unwrap().len(), 30);
    assert!(model.exists());
}

#[test]
fn compare_smoke_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = two_tasks(dir.path());
    let out_dir = dir.path().join("cmp");
    let out = run(&[
        "compare",
        "--source-device", s(&configs().join("server.toml")),
        "--target-device", s(&configs().join("embedded.toml")),
        "--tasks", s(&tasks),
        "--strategies", "raw,vanilla-finetune,moses",
        "--seeds", "0,1",
        "--trials", "16",
        "--samples", "60",
        "--epochs", "2",
        "--out-dir", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "metrics.md", "comparison.json", "report_vanilla-finetune_seed0.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let md = dir.path().join("again.md");
    let rep = run(&["report", "--in", s(&out_dir.join("metrics.csv")), "--format", "markdown", "--out", s(&md)]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    assert_eq!(std::fs::read(&md).unwrap(), std::fs::read(out_dir.join("metrics.md")).unwrap());
}
