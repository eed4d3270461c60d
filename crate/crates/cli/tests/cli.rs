use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3

[world]
regions = 16
height = 10
width = 10
channels = 8
concepts = 4

[schedule]
train_budget = 4
test_budget = 5
"#;

fn owlgps(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owlgps"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn train_then_infer_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let stdout = ok(&owlgps(&["train", "--config", "run.toml", "--out", "out"], dir.path()));
    assert!(stdout.starts_with("train: 4 steps"), "{stdout}");
    let out = dir.path().join("out");
    for f in ["train/steps.csv", "train/metrics.json", "checkpoint.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let stdout = ok(&owlgps(
        &["infer", "--config", "run.toml", "--out", "out", "--checkpoint", "out/checkpoint.json"],
        dir.path(),
    ));
    assert!(stdout.starts_with("infer: 5 steps"), "{stdout}");
    let steps = fs::read_to_string(out.join("infer/steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 6);

    // resuming a finished inference checkpoint reproduces the same rows
    let again = ok(&owlgps(
        &["infer", "--config", "run.toml", "--out", "again", "--checkpoint", "out/infer_checkpoint.json"],
        dir.path(),
    ));
    assert_eq!(again, stdout);
    assert_eq!(fs::read_to_string(dir.path().join("again/infer/steps.csv")).unwrap(), steps);
}

#[test]
fn generated_dataset_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let manifest = ok(&owlgps(&["generate", "--config", "run.toml", "--out", "data"], dir.path()));
    assert!(Path::new(manifest.trim()).is_absolute() || dir.path().join(manifest.trim()).exists());
    fs::write(
        dir.path().join("from_data.toml"),
        format!("dataset = \"data/manifest.json\"\n{CONFIG}"),
    )
    .unwrap();
    let stdout = ok(&owlgps(&["train", "--config", "from_data.toml", "--out", "out"], dir.path()));
    assert!(stdout.starts_with("train: 4 steps"), "{stdout}");
}

#[test]
fn bench_prints_one_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let stdout = ok(&owlgps(
        &["bench", "--config", "run.toml", "--out", "b", "--modes", "owl_gps,random", "--seeds", "2"],
        dir.path(),
    ));
    assert!(stdout.lines().any(|l| l.starts_with("owl_gps")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("random")), "{stdout}");
    assert!(dir.path().join("b/bench_runs.csv").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\n[schedule]\ntest_budget = 0\n").unwrap();
    let out = owlgps(&["train", "--config", "bad.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_budget"));
    let out = owlgps(&["bench", "--config", "missing.toml"], dir.path());
    assert!(!out.status.success());
    let out = owlgps(&["bench", "--config", "bad.toml", "--modes", "nope"], dir.path());
    assert!(!out.status.success());
}
