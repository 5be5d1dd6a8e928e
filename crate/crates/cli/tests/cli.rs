use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5
output_dir = "out"

[dataset.synthetic]
class_count = 4
cases_per_class = 60
test_cases_per_class = 30
dimension = 6
separation = 5.0
noise_sigma = 1.0

[network]
hidden_widths = [12, 12]

[train]
learning_rate = 0.05
epochs = 8
batch_size = 16
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankprobe"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) {
    std::fs::write(dir.join("exp.toml"), text).unwrap();
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn missing_dataset_path_exits_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
seed = 1
[dataset.delimited]
train = "nope/train.csv"
test = "nope/test.csv"
class_count = 3
[network]
hidden_widths = [4]
[train]
learning_rate = 0.1
epochs = 1
batch_size = 1
"#;
    write_config(dir.path(), cfg);
    let out = run(dir.path(), &["train", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        text(&out.stderr).contains("dataset.delimited.train"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn sd_on_one_hidden_layer_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("[12, 12]", "[12]") + "\n[injection]\nkind = \"SD\"\n";
    write_config(dir.path(), &cfg);
    let out = run(dir.path(), &["inject", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        &SMALL.replace("learning_rate = 0.05", "learning_rate = 1e250"),
    );
    let out = run(dir.path(), &["train", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("epoch"));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "seed = \"one\"\n");
    let out = run(dir.path(), &["train", "--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let out = run(dir.path(), &["train", "--config", "exp.toml"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).starts_with("train_accuracy="));
    let out = run(
        dir.path(),
        &[
            "analyze",
            "--config",
            "exp.toml",
            "--model",
            "out/model.msc",
            "--thresholds",
            "2,1",
        ],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("thresholds   ascend >= 2, descend >= 1"));
    for f in [
        "report.json",
        "report.txt",
        "trajectories.csv",
        "instrumented.msc",
    ] {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
}

#[test]
fn analyze_with_unreadable_model_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    std::fs::write(dir.path().join("bad.msc"), b"MSC1\x01").unwrap();
    let out = run(
        dir.path(),
        &["analyze", "--config", "exp.toml", "--model", "bad.msc"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("byte offset"));
}

#[test]
fn experiment_prints_summary_and_respects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        &(SMALL.to_string() + "\n[injection]\nkind = \"ITD\"\n"),
    );
    let out = run(
        dir.path(),
        &["experiment", "--config", "exp.toml", "--out", "a"],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let line = text(&out.stdout);
    assert!(line.starts_with("injected=ITD reported="), "{line}");
    let again = run(
        dir.path(),
        &["experiment", "--config", "exp.toml", "--out", "b"],
    );
    let other = run(
        dir.path(),
        &[
            "experiment",
            "--config",
            "exp.toml",
            "--out",
            "c",
            "--seed",
            "6",
        ],
    );
    assert!(again.status.success() && other.status.success());
    let read = |d: &str| std::fs::read(dir.path().join(d).join("report.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn grid_prints_one_line_per_run() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let out = run(
        dir.path(),
        &[
            "experiment",
            "--config",
            "exp.toml",
            "--seeds",
            "1,2",
            "--defects",
            "ITD,UTD,SD",
        ],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("seed=1 injected=ITD"));
    assert!(lines[6].starts_with("matched "));
}

#[test]
fn bad_threshold_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let out = run(
        dir.path(),
        &["analyze", "--config", "exp.toml", "--thresholds", "0,1"],
    );
    assert_eq!(out.status.code(), Some(2));
}
