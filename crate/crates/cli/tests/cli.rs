use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "data": {"num_videos": 20},
  "model": {"embed_dim": 16, "mlp_hidden": 32},
  "train": {"epochs": 1},
  "generation": {"k": 2}
}"#;

fn biant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biant"))
        .args(args)
        .env("BIANT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_flag() {
    let out = biant(&["train", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--config",
        "--out",
        "--seed",
        "--alpha",
        "--beta",
        "--n-obs-bwd",
        "--preamble",
        "--k",
        "--dump-encoded",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
    let ablate = String::from_utf8(biant(&["ablate", "--help"]).stdout).unwrap();
    assert!(ablate.contains("--grid") && ablate.contains("obs_interval"));
}

#[test]
fn unknown_flags_and_bad_values_are_rejected() {
    assert_eq!(biant(&["train", "--bogus"]).status.code(), Some(3));
    assert_eq!(biant(&["train", "--preamble", "verbose"]).status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = biant(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("epochz"));
    let out = biant(&["gen-data", "--out", dir.path().to_str().unwrap(), "--beta", "-1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = biant(&["gen-data", "--out", dir.path().to_str().unwrap(), "--n-obs-bwd", "40"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = biant(&["eval", "--out", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope"));
    assert_eq!(
        biant(&["train", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        biant(&["report", "--out", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.json");
    fs::write(
        &cfg,
        r#"{"data": {"num_videos": 10}, "model": {"embed_dim": 8, "mlp_hidden": 8}, "train": {"epochs": 1, "lr": 1e12}}"#,
    )
    .unwrap();
    let out = biant(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch 0"));
}

#[test]
fn gradcheck_passes() {
    let out = biant(&["gradcheck"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8(out.stdout).unwrap().contains("PASS"));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = out_dir.to_str().unwrap();
    for args in [
        vec!["gen-data", "--config", &cfg, "--out", out],
        vec!["train", "--config", &cfg, "--out", out, "--beta", "0.5"],
        vec!["eval", "--config", &cfg, "--out", out, "--candidates"],
    ] {
        let o = biant(&args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for f in [
        "config.json",
        "checkpoint.json",
        "train_log.csv",
        "eval_report.json",
        "eval_summary.csv",
        "candidates.jsonl",
        "data/train.json",
        "data/corpus_meta.json",
    ] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["train"]["weights"]["beta"], 0.5);
    assert_eq!(echoed["model"]["vocab_size"], 42);
    let log = fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,mean_loss,mean_loss_fwd,mean_loss_bwd,wallclock_s\n"));
    // 4 test videos x 13 windows x K=2.
    assert_eq!(
        fs::read_to_string(out_dir.join("candidates.jsonl"))
            .unwrap()
            .lines()
            .count(),
        104
    );

    let report = biant(&["report", "--out", out]);
    assert!(report.status.success());
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("evaluation: 52 instances") && text.contains("action"));

    let dump = biant(&["train", "--config", &cfg, "--out", out, "--dump-encoded", "2"]);
    let text = String::from_utf8(dump.stdout).unwrap();
    assert!(text.contains("[forward]") && text.contains("[backward]"), "{text}");
}

#[test]
fn stale_corpus_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    assert!(biant(&["gen-data", "--config", &cfg, "--out", out]).status.success());
    let o = biant(&["train", "--config", &cfg, "--out", out, "--data-seed", "9"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("different data config"));
}

#[test]
fn shipped_config_matches_defaults() {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("echo");
    let o = biant(&[
        "gen-data",
        "--config",
        shipped.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    let mut expected: serde_json::Value = serde_json::from_str(&fs::read_to_string(&shipped).unwrap()).unwrap();
    expected["out_dir"] = serde_json::Value::String(out.to_str().unwrap().into());
    assert_eq!(echoed, expected);
}
