use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eliminet")).arg("--threads").arg("1").args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let body = format!(
        r#"{{"hidden_dim": 4, "embedding_dim": 6, "dropout_rate": 0.0, "allow_nonstandard": true{extra}}}"#
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn synth(dir: &Path, name: &str, num: usize, seed: u64, options: usize) -> PathBuf {
    let path = dir.join(name);
    let (num, seed, options) = (num.to_string(), seed.to_string(), options.to_string());
    ok(&["synth", "--num", &num, "--seed", &seed, "--options", &options, "--out", p(&path)]);
    path
}

/// Trains a small model and returns its output directory.
fn train(dir: &Path, cfg: &Path, data: &Path, mode: &str, epochs: usize, name: &str) -> PathBuf {
    let out = dir.join(name);
    let epochs = epochs.to_string();
    ok(&[
        "train", "--config", p(cfg), "--train", p(data), "--valid", p(data), "--mode", mode, "--epochs", &epochs,
        "--batch-size", "4", "--out", p(&out),
    ]);
    out
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.jsonl", 20, 3, 4);
    let b = synth(dir.path(), "b.jsonl", 20, 3, 4);
    let c = synth(dir.path(), "c.jsonl", 20, 4, 4);
    let read = |p: &Path| std::fs::read_to_string(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(read(&a).lines().count(), 20);
}

#[test]
fn categorize_writes_full_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("q.jsonl");
    std::fs::write(
        &data,
        r#"{"id":"1","passage":"a fire broke out","question":"How did the people who didn't jump out of the window get out of the building?","options":["a","b","c","d"],"label":0}"#,
    )
    .unwrap();
    let out = dir.path().join("cats.csv");
    ok(&["categorize", "--data", p(&data), "--out", p(&out)]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 13);
    let how = rows.iter().find(|r| r[0] == "how").unwrap();
    assert_eq!(how[1], "1");
    let total: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "");
    let data = synth(dir.path(), "d.jsonl", 12, 1, 4);
    let out = train(dir.path(), &cfg, &data, "end_to_end", 5, "run");
    assert!(out.join("model.json").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,valid_acc");
    assert_eq!(lines.len(), 6);
    for l in &lines[1..] {
        let cells: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cells[1].is_finite() && (0.0..=1.0).contains(&cells[2]));
    }
    let stdout = ok(&["eval", "--model", p(&out.join("model.json")), "--data", p(&data)]);
    assert!(stdout.starts_with("accuracy "), "{stdout}");
}

#[test]
fn two_stage_writes_metrics_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "");
    let data = synth(dir.path(), "d.jsonl", 8, 2, 4);
    let out = train(dir.path(), &cfg, &data, "two_stage", 2, "run");
    for stage in ["stage1", "stage2"] {
        let m = std::fs::read_to_string(out.join(format!("metrics_{stage}.csv"))).unwrap();
        assert_eq!(m.lines().count(), 3);
    }
    assert!(out.join("model.json").exists());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#", "hiden_dim": 3"#);
    let data = synth(dir.path(), "d.jsonl", 4, 2, 4);
    let out = run(&["train", "--config", p(&cfg), "--train", p(&data), "--valid", p(&data), "--out", p(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("hiden_dim"), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn eval_by_category_and_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "");
    let data = synth(dir.path(), "d.jsonl", 6, 1, 4);
    let model = train(dir.path(), &cfg, &data, "end_to_end", 1, "run").join("model.json");
    let stdout = ok(&["eval", "--model", p(&model), "--data", p(&data), "--by-category"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[1], "category,count,correct,accuracy");
    assert_eq!(lines.len(), 2 + 13);
    let what = lines.iter().find(|l| l.starts_with("what,")).unwrap();
    assert!(what.starts_with("what,6,"), "{what}");

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["eval", "--model", p(&model), "--data", p(&empty)]);
    assert!(!out.status.success());
    let out = run(&["ensemble-eval", "--models", p(&model), p(&model), "--data", p(&empty)]);
    assert!(!out.status.success());
}

fn accuracy_of(stdout: &str) -> String {
    stdout.split("accuracy ").nth(1).unwrap().split_whitespace().next().unwrap().to_string()
}

#[test]
fn ensemble_of_copies_matches_single_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "");
    let data = synth(dir.path(), "d.jsonl", 10, 1, 4);
    let model = train(dir.path(), &cfg, &data, "end_to_end", 2, "run").join("model.json");
    let single = accuracy_of(&ok(&["eval", "--model", p(&model), "--data", p(&data)]));
    let triple = accuracy_of(&ok(&["ensemble-eval", "--models", p(&model), p(&model), p(&model), "--data", p(&data)]));
    assert_eq!(single, triple);

    let one = run(&["ensemble-eval", "--models", p(&model), "--data", p(&data)]);
    assert_eq!(one.status.code(), Some(2));

    let three = synth(dir.path(), "three.jsonl", 4, 1, 3);
    let out = run(&["ensemble-eval", "--models", p(&model), p(&model), "--data", p(&three)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("options"));
}

#[test]
fn six_option_models_train_and_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#", "n_options": 6"#);
    let data = synth(dir.path(), "d.jsonl", 8, 5, 6);
    let a = train(dir.path(), &cfg, &data, "end_to_end", 1, "a").join("model.json");
    let cfg_b = write_config(dir.path(), "b.json", r#", "n_options": 6, "seed": 1"#);
    let b = train(dir.path(), &cfg_b, &data, "end_to_end", 1, "b").join("model.json");
    let stdout = ok(&["ensemble-eval", "--models", p(&a), p(&b), "--data", p(&data)]);
    assert!(stdout.contains("ensemble of 2 models"), "{stdout}");
}

#[test]
fn trace_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#", "l_passes": 3"#);
    let data = synth(dir.path(), "d.jsonl", 6, 1, 4);
    let model = train(dir.path(), &cfg, &data, "end_to_end", 1, "run").join("model.json");
    let stem = dir.path().join("trace");
    let stdout = ok(&["trace", "--model", p(&model), "--data", p(&data), "--instance", "synth-0", "--out", p(&stem)]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("pass ")).count(), 4);

    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 4 * 4);
    for pass in 0..4 {
        let total: f64 = rows.iter().filter(|r| r[0] == pass.to_string()).map(|r| r[2].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    let svg = std::fs::read_to_string(stem.with_extension("svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    for id in ["correct", "top-incorrect"] {
        let line = doc.descendants().find(|n| n.attribute("id") == Some(id)).unwrap();
        assert_eq!(line.attribute("points").unwrap().split_whitespace().count(), 4);
    }

    let missing = run(&["trace", "--model", p(&model), "--data", p(&data), "--instance", "nope", "--out", p(&stem)]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    for seed in ["0", "1", "2"] {
        assert!(ok(&["gradcheck", "--seed", seed]).starts_with("PASS"));
    }
    let out = run(&["gradcheck", "--inject-fault", "0.1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));
}

#[test]
fn bad_subcommand_is_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
