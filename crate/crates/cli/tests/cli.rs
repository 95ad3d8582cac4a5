//! End-to-end checks of the binary: exit codes, file outputs, and
//! byte-identical reruns.

use std::path::Path;
use std::process::Command;

fn eef() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eef"))
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let mut entries: Vec<_> = std::fs::read_dir(&current)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        "\
env.n_products = 30
env.n_tasks_train = 10
env.n_tasks_test = 6
expert.strong.tolerance = 0.1
eef.iterations = 2
n_seeds = 1
",
    )
    .unwrap();
    path
}

#[test]
fn unknown_method_exits_2_with_usage() {
    let out = eef()
        .args(["train", "--method", "dpo", "--output-dir", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--method"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = eef().args(["train", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_2() {
    let out = eef()
        .args([
            "train",
            "--config",
            "/nonexistent/ref.cfg",
            "--output-dir",
            "/tmp/x",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("usage"), "stderr: {stderr}");
}

#[test]
fn train_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = eef()
            .args([
                "train",
                "--method",
                "eef",
                "--m",
                "3",
                "--iters",
                "2",
                "--seed",
                "11",
                "--config",
                config.to_str().unwrap(),
                "--output-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = tree_bytes(&out_a);
    let b = tree_bytes(&out_b);
    assert_eq!(
        a.iter().map(|(p, _)| p).collect::<Vec<_>>(),
        b.iter().map(|(p, _)| p).collect::<Vec<_>>()
    );
    for ((path_a, bytes_a), (_, bytes_b)) in a.iter().zip(b.iter()) {
        assert_eq!(bytes_a, bytes_b, "file {path_a} differs between reruns");
    }
    // The expected artifact tree exists.
    assert!(out_a.join("seed_0/manifest.json").exists());
    assert!(out_a.join("seed_0/checkpoints/iter0.txt").exists());
    assert!(out_a.join("seed_0/datasets/iter1_exploration.jsonl").exists());
    assert!(out_a.join("world/catalog.jsonl").exists());
    assert!(out_a.join("report.txt").exists());
}

#[test]
fn gen_env_eval_and_nav_stats_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("out");
    // Generate the world exports.
    let status = eef()
        .args([
            "gen-env",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "3",
            "--output-dir",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let catalog = std::fs::read_to_string(out.join("world/catalog.jsonl")).unwrap();
    assert!(catalog.starts_with("# minishop-catalog schema=1"));
    assert_eq!(catalog.lines().count(), 31);

    // Train one run, then evaluate its selected checkpoint.
    let train_dir = dir.path().join("train");
    assert!(eef()
        .args([
            "train",
            "--method",
            "sft-pos",
            "--seed",
            "3",
            "--config",
            config.to_str().unwrap(),
            "--output-dir",
            train_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let eval_dir = dir.path().join("eval");
    assert!(eef()
        .args([
            "eval",
            "--checkpoint",
            train_dir.join("seed_0/checkpoints/iter0.txt").to_str().unwrap(),
            "--split",
            "test",
            "--seed",
            "3",
            "--config",
            config.to_str().unwrap(),
            "--output-dir",
            eval_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    assert!(eval_dir.join("eval.json").exists());

    // Navigation stats over the evaluation trajectories.
    let out = eef()
        .args([
            "nav-stats",
            "--input",
            eval_dir.join("eval_trajectories.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("next_success"), "stdout: {stdout}");

    // Report over the training directory.
    let report_dir = dir.path().join("report");
    let out = eef()
        .args([
            "report",
            "--input",
            train_dir.to_str().unwrap(),
            "--output-dir",
            report_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(report_dir.join("report.jsonl").exists());
}
