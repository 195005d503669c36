//! End-to-end tests of the `sarsfe` binary: every subcommand, the exit
//! code contract (0 success, 1 usage/config, 2 runtime), and output
//! determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sarsfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarsfe"))
        .args(args)
        .env_remove("SARSFE_THREADS")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?})\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn lines_of(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn synth_into(dir: &Path, classes: u32, per_class: u32) {
    let out = sarsfe(&[
        "synth",
        "--classes",
        &classes.to_string(),
        "--per-class",
        &per_class.to_string(),
        "--size",
        "64,64",
        "--seed",
        "7",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out, "synth");
}

/// Tiny-but-real run config: one transformer block, 8-dim embeddings,
/// four prototypes. Trains in about a second.
fn write_run_config(dir: &Path, data: &Path, out_dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "data": {"dir": data},
        "encoder": {
            "patch_size": 8, "embed_dim": 8, "depth": 1, "n_heads": 2,
            "head_hidden": 16, "proj_dim": 8, "n_prototypes": 4
        },
        "augment": {"global_crop": 48, "local_crop": 32, "n_local": 1},
        "train": {"epochs": 2, "batch_size": 4, "checkpoint_every": 1},
        "seed": 11,
        "output_dir": out_dir
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn synth_writes_a_complete_deterministic_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth_into(&a, 2, 3);
    synth_into(&b, 2, 3);

    for class in ["class_0", "class_1"] {
        let files: Vec<_> = std::fs::read_dir(a.join(class)).unwrap().collect();
        assert_eq!(files.len(), 6, "3 samples = 3 real + 3 imag files");
    }
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap(),
        "same flags must give identical manifests"
    );
    let sample = "class_1/class_1_0002.real.sfet";
    assert_eq!(
        std::fs::read(a.join(sample)).unwrap(),
        std::fs::read(b.join(sample)).unwrap(),
        "same flags must give identical image bytes"
    );
}

#[test]
fn synth_refuses_nonempty_out_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    synth_into(&dir, 1, 1);
    let again = sarsfe(&["synth", "--classes", "1", "--per-class", "1", "--out", dir.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(1), "refusal is a usage error");
    assert!(stderr_of(&again).contains("--force"));

    let forced = sarsfe(&[
        "synth", "--classes", "1", "--per-class", "1", "--out",
        dir.to_str().unwrap(), "--force",
    ]);
    assert_ok(&forced, "synth --force");
}

#[test]
fn synth_rejects_an_empty_request() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sarsfe(&[
        "synth", "--classes", "2", "--per-class", "0", "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("empty dataset"), "stderr: {}", stderr_of(&out));
}

#[test]
fn unknown_config_key_is_a_usage_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"trian": {"epochs": 3}}"#).unwrap();
    let out = sarsfe(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("$.trian"), "stderr: {}", stderr_of(&out));
}

#[test]
fn pipeline_runs_end_to_end_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 2, 4);
    let run_dir = tmp.path().join("run");
    let cfg = write_run_config(tmp.path(), &data, &run_dir);

    let out = sarsfe(&["train", "--config", cfg.to_str().unwrap()]);
    assert_ok(&out, "train");
    let stdout = stdout_of(&out);
    assert!(stdout.contains("wrote "), "commands must print their outputs: {stdout}");
    assert!(run_dir.join("run_config.json").exists(), "resolved config is provenance");
    // 8 images / batch 4 = 2 steps per epoch, 2 epochs.
    let metrics = run_dir.join("metrics.csv");
    assert_eq!(lines_of(&metrics), 1 + 4);
    let final_ckpt = run_dir.join("ckpt_4");
    assert!(final_ckpt.is_dir());

    // Resume from the midpoint checkpoint: same final artifacts.
    let metrics_before = std::fs::read(&metrics).unwrap();
    let out = sarsfe(&[
        "train", "--config", cfg.to_str().unwrap(),
        "--resume", run_dir.join("ckpt_2").to_str().unwrap(),
    ]);
    assert_ok(&out, "train --resume");
    assert_eq!(
        std::fs::read(&metrics).unwrap(),
        metrics_before,
        "resumed run must regenerate identical metrics"
    );

    let features = tmp.path().join("features.csv");
    let out = sarsfe(&[
        "extract", "--checkpoint", final_ckpt.to_str().unwrap(),
        "--data", data.to_str().unwrap(), "--out", features.to_str().unwrap(),
    ]);
    assert_ok(&out, "extract");
    assert_eq!(lines_of(&features), 1 + 8);

    let curve_csv = tmp.path().join("knn.csv");
    let knn_svg = tmp.path().join("knn.svg");
    let out = sarsfe(&[
        "eval-knn", "--features", features.to_str().unwrap(),
        "--shots", "1,2", "--k", "1", "--repeats", "2",
        "--out", curve_csv.to_str().unwrap(), "--svg", knn_svg.to_str().unwrap(),
    ]);
    assert_ok(&out, "eval-knn");
    assert_eq!(lines_of(&curve_csv), 1 + 2, "one row per shot count");
    assert!(std::fs::read_to_string(&knn_svg).unwrap().starts_with("<svg"));

    let pca_csv = tmp.path().join("pca.csv");
    let out = sarsfe(&[
        "eval-pca", "--data", data.to_str().unwrap(),
        "--resize", "32", "--dim", "4", "--out", pca_csv.to_str().unwrap(),
    ]);
    assert_ok(&out, "eval-pca");
    assert_eq!(lines_of(&pca_csv), 1 + 8);

    let proj_csv = tmp.path().join("proj.csv");
    let out = sarsfe(&[
        "project", "--features", features.to_str().unwrap(),
        "--out", proj_csv.to_str().unwrap(),
        "--perplexity", "2", "--iters", "60",
    ]);
    assert_ok(&out, "project");
    assert_eq!(lines_of(&proj_csv), 1 + 8);
    let proj_svg = tmp.path().join("proj.svg");
    assert!(proj_svg.exists(), "project derives the SVG path from --out");

    let chart = tmp.path().join("compare.svg");
    let out = sarsfe(&[
        "curve",
        "--input", &format!("sfe={}", curve_csv.display()),
        "--input", &format!("pca={}", curve_csv.display()),
        "--out", chart.to_str().unwrap(),
    ]);
    assert_ok(&out, "curve");
    let svg = std::fs::read_to_string(&chart).unwrap();
    assert!(svg.contains(">sfe<") && svg.contains(">pca<"), "legend lists both curves");
}

#[test]
fn seeded_commands_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data, 2, 4);
    let pca_args = |out: &Path| {
        vec![
            "eval-pca".to_string(),
            "--data".into(), data.display().to_string(),
            "--resize".into(), "24".into(),
            "--dim".into(), "3".into(),
            "--out".into(), out.display().to_string(),
        ]
    };
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    for out in [&a, &b] {
        let args: Vec<String> = pca_args(out);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_ok(&sarsfe(&refs), "eval-pca");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // Same features, same seed -> identical k-NN curve bytes.
    let (ca, cb) = (tmp.path().join("ca.csv"), tmp.path().join("cb.csv"));
    for out in [&ca, &cb] {
        let run = sarsfe(&[
            "eval-knn", "--features", a.to_str().unwrap(),
            "--shots", "1,2", "--k", "1", "--repeats", "3", "--seed", "5",
            "--out", out.to_str().unwrap(),
        ]);
        assert_ok(&run, "eval-knn");
    }
    assert_eq!(std::fs::read(&ca).unwrap(), std::fs::read(&cb).unwrap());
}

#[test]
fn thread_settings_are_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sarsfe(&[
        "synth", "--threads", "0", "--classes", "1", "--per-class", "1",
        "--out", tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(env!("CARGO_BIN_EXE_sarsfe"))
        .args(["synth", "--classes", "1", "--per-class", "1"])
        .arg("--out")
        .arg(tmp.path().join("y"))
        .env("SARSFE_THREADS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("SARSFE_THREADS"));

    let out = Command::new(env!("CARGO_BIN_EXE_sarsfe"))
        .args(["synth", "--classes", "1", "--per-class", "1"])
        .arg("--out")
        .arg(tmp.path().join("z"))
        .env("SARSFE_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sarsfe(&[
        "extract",
        "--checkpoint", tmp.path().join("nope").to_str().unwrap(),
        "--data", tmp.path().to_str().unwrap(),
        "--out", tmp.path().join("f.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "missing checkpoint is a runtime abort");

    let out = sarsfe(&[
        "eval-knn",
        "--features", tmp.path().join("missing.csv").to_str().unwrap(),
        "--out", tmp.path().join("c.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_and_bad_flags_follow_the_exit_contract() {
    assert_eq!(sarsfe(&["--help"]).status.code(), Some(0));
    assert_eq!(sarsfe(&["synth", "--help"]).status.code(), Some(0));
    assert_eq!(sarsfe(&["--version"]).status.code(), Some(0));
    assert_eq!(sarsfe(&["synth", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(sarsfe(&["not-a-command"]).status.code(), Some(1));
}

#[test]
fn eval_knn_rejects_bad_metric_as_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let features = tmp.path().join("f.csv");
    std::fs::write(&features, "id,label,z0\na,x,1.0\nb,y,2.0\n").unwrap();
    let out = sarsfe(&[
        "eval-knn", "--features", features.to_str().unwrap(),
        "--metric", "manhattan",
        "--out", tmp.path().join("c.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "unknown metric is a usage error");
}
