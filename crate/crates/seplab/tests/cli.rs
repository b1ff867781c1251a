use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 5

[dataset]
train = 4
valid = 2
test = 4

[dataset.scene]
utterance_len = 2000

[model]
preset = "micro"
design = "siso_iterative"

[train]
max_epochs = 2
patience = 2
batch_size = 2
"#;

fn seplab(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seplab"))
        .arg("--workdir")
        .arg(workdir)
        .args(["--config", "exp.toml", "--jobs", "2"])
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn simulate_train_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();

    stdout(&seplab(dir.path(), &["simulate"]));
    let manifest = std::fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 10);

    stdout(&seplab(dir.path(), &["train"]));
    let again = stdout(&seplab(dir.path(), &["train"]));
    assert!(again.contains("existing run"), "second train should reuse the run: {again}");

    let eval = stdout(&seplab(dir.path(), &["evaluate"]));
    assert!(eval.contains("<25") && eval.contains("Average"), "{eval}");

    let report = stdout(&seplab(dir.path(), &["report"]));
    assert!(report.contains("paper-reported"), "{report}");
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), "[model]\nbogus = 1\n").unwrap();
    let out = seplab(dir.path(), &["paramcheck"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn set_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = seplab(dir.path(), &["--set", "dataset.train=1", "--set", "dataset.valid=1", "--set", "dataset.test=1", "simulate"]);
    stdout(&out);
    let manifest = std::fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
}
