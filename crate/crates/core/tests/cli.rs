//! End-to-end CLI tests: exit codes, artifacts on disk, reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn memaudit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memaudit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let text = format!(
        "[experiment]\nname = smoke\nseed = 42\n\n[model]\narch = MLP-1\n\n\
         [data]\ndataset = synth\nlimit = 400\nood_dataset = synth-texture\nood_n = 120\n\n\
         [train]\nbatch_size = 64\nmax_epochs = 2\npatience = 2\n\n\
         [canary]\nindex = 17\nletter = A\n{extra}"
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn inject_writes_dataset_preview_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inj");
    let run = |out: &Path| {
        memaudit(
            &[
                "inject",
                "--dataset",
                "synth",
                "--index",
                "17",
                "--letter",
                "A",
                "--out",
                out.to_str().unwrap(),
            ],
            dir.path(),
        )
    };
    let o = run(&out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("train-images-idx3-ubyte").exists());
    assert!(out.join("preview.svg").exists());
    let preview = std::fs::read_to_string(out.join("preview.svg")).unwrap();
    assert!(preview.contains("injected"));
    let first = std::fs::read(out.join("train-images-idx3-ubyte")).unwrap();

    // Re-run into a fresh directory: identical bytes.
    let out2 = dir.path().join("inj2");
    assert!(run(&out2).status.success());
    let second = std::fs::read(out2.join("train-images-idx3-ubyte")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn invalid_letter_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = memaudit(
        &[
            "inject",
            "--dataset",
            "synth",
            "--index",
            "0",
            "--letter",
            "7",
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_dataset_path_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[data]\ndataset = mnist\n").unwrap();
    let o = memaudit(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("MEMAUDIT_DATA_DIR"), "{err}");
}

#[test]
fn train_audit_report_pipeline_and_resume_noop() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "smoke.cfg", "");
    let run_dir = dir.path().join("run");
    let o = memaudit(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for artifact in ["config.cfg", "manifest.json", "metrics.csv", "final.maud", "report.json"] {
        assert!(run_dir.join(artifact).exists(), "{artifact} missing");
    }

    // Second train on a completed run warns and leaves it unchanged.
    let before = std::fs::read(run_dir.join("final.maud")).unwrap();
    let o = memaudit(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("already holds a completed run"));
    assert_eq!(before, std::fs::read(run_dir.join("final.maud")).unwrap());

    // Audit emits JSON with the full result schema plus csv and svg.
    let o = memaudit(
        &["audit", "--run-dir", run_dir.to_str().unwrap(), "--n", "80"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let val: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("mscore.json")).unwrap())
            .unwrap();
    for field in ["x_u", "x_r", "m", "t_stat", "p_value", "n", "meta"] {
        assert!(!val[field].is_null(), "mscore.json misses {field}");
    }
    assert_eq!(val["n"].as_u64(), Some(80));
    assert!(run_dir.join("histogram.svg").exists());
    assert!(run_dir.join("results.csv").exists());

    // Influence over the stored checkpoints.
    let o = memaudit(
        &[
            "influence",
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--k",
            "5",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let influence = std::fs::read_to_string(run_dir.join("influence.csv")).unwrap();
    assert_eq!(influence.lines().count(), 400 + 1, "one row per training sample");

    // Deterministic across reruns.
    let o = memaudit(
        &[
            "influence",
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--k",
            "5",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(
        influence,
        std::fs::read_to_string(run_dir.join("influence.csv")).unwrap()
    );

    // Profile over checkpoints.
    let o = memaudit(
        &[
            "analyze",
            "profile",
            "--run-dir",
            run_dir.to_str().unwrap(),
            "--n",
            "60",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run_dir.join("profile.svg").exists());

    // Report aggregates the audit row.
    let o = memaudit(
        &["report", "--experiment-dir", run_dir.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let md = std::fs::read_to_string(run_dir.join("report.md")).unwrap();
    assert!(md.contains("Per-canary M scores"));
    assert!(run_dir.join("summary.csv").exists());
}

#[test]
fn unknown_subcommand_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = memaudit(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = memaudit(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["inject", "train", "audit", "influence", "analyze", "report"] {
        assert!(text.contains(sub), "help misses {sub}");
    }
}
