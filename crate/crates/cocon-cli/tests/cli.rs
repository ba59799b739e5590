//! End-to-end CLI runs on a micro configuration.

use std::path::Path;
use std::process::{Command, Output};

const MICRO_CONFIG: &str = r#"
[data]
classes = 4
clips = 16
frame_size = 16
crop_margin = 2
N = 3
K = 2
stride = 1
views = ["rgb", "flow"]

[model]
D = 8
depth = 2
width = 4

[train]
phase1_epochs = 1
phase2_epochs = 1
batch = 4
seed = 3

[eval]
epochs = 2
"#;

fn cocon(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocon"))
        .args(args)
        .current_dir(dir)
        .env_remove("COCON_RUN_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, MICRO_CONFIG).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn full_pipeline_and_idempotence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir);

    // dataset
    let out = cocon(&["--config", &cfg, "--run", "r", "dataset"], dir);
    assert!(out.status.success(), "dataset: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/manifest.jsonl").exists());
    assert!(dir.join("r/config.toml").exists(), "resolved config must be echoed");

    // rerun is a no-op
    let out = cocon(&["--config", &cfg, "--run", "r", "dataset"], dir);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("already"));

    // --force rebuilds
    let out = cocon(&["--config", &cfg, "--run", "r", "--force", "dataset"], dir);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote"));

    // phase 1 then phase 2
    let out = cocon(&["--config", &cfg, "--run", "r", "train", "--phase", "1"], dir);
    assert!(out.status.success(), "phase1: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/checkpoints/phase1/rgb/manifest.json").exists());
    assert!(dir.join("r/checkpoints/phase1/flow/params.bin").exists());
    assert!(dir.join("r/metrics/phase1.jsonl").exists());

    let out = cocon(
        &["--config", &cfg, "--run", "r", "train", "--phase", "2", "--ablation", "cocon"],
        dir,
    );
    assert!(out.status.success(), "phase2: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/checkpoints/phase2_cocon/manifest.json").exists());

    // idempotent rerun of training
    let out = cocon(&["--config", &cfg, "--run", "r", "train", "--phase", "1"], dir);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("already"));

    // eval on random init and on the checkpoint
    let out = cocon(&["--config", &cfg, "--run", "r", "eval", "--init", "random"], dir);
    assert!(out.status.success(), "eval random: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/eval/random_probe.json").exists());
    assert!(dir.join("r/eval/random_probe.csv").exists());

    let out = cocon(
        &["--config", &cfg, "--run", "r", "eval", "--init", "checkpoints/phase2_cocon"],
        dir,
    );
    assert!(out.status.success(), "eval ckpt: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/eval/phase2_cocon_probe.json").exists());

    // analyze: export then the store-based tasks
    let out = cocon(
        &[
            "--config",
            &cfg,
            "--run",
            "r",
            "analyze",
            "--task",
            "export",
            "--checkpoint",
            "r/checkpoints/phase2_cocon",
            "--name",
            "emb",
        ],
        dir,
    );
    assert!(out.status.success(), "export: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/analysis/emb/vectors.bin").exists());
    assert!(dir.join("r/analysis/emb/manifest.json").exists());

    let out = cocon(
        &[
            "--config",
            &cfg,
            "--run",
            "r",
            "analyze",
            "--task",
            "consistency",
            "--store",
            "r/analysis/emb",
            "--top-m",
            "2",
            "--threshold",
            "1",
        ],
        dir,
    );
    assert!(out.status.success(), "consistency: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/analysis/consistency.json").exists());

    let out = cocon(
        &[
            "--config",
            &cfg,
            "--run",
            "r",
            "analyze",
            "--task",
            "align",
            "--checkpoint",
            "r/checkpoints/phase2_cocon",
            "--blocks",
            "4",
        ],
        dir,
    );
    assert!(out.status.success(), "align: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("r/analysis/alignment.csv").exists());
    assert!(dir.join("r/analysis/alignment_meta.json").exists());
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Unknown key in the config file: exit 2.
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "[data]\nbogus = 1\n").unwrap();
    let out = cocon(&["--config", bad.to_str().unwrap(), "--run", "x", "dataset"], dir);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Invalid value: exit 2.
    let bad2 = dir.join("bad2.toml");
    std::fs::write(&bad2, "[loss]\ntau = -1.0\n").unwrap();
    let out = cocon(&["--config", bad2.to_str().unwrap(), "--run", "x", "dataset"], dir);
    assert_eq!(out.status.code(), Some(2));

    // Missing checkpoint: exit 3 with a one-line diagnostic.
    let cfg = write_config(dir);
    let out = cocon(&["--config", &cfg, "--run", "y", "eval", "--init", "nope/missing"], dir);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "one-line diagnostic, got: {err}");

    // Phase 2 without phase 1: exit 3.
    let out = cocon(&["--config", &cfg, "--run", "z", "train", "--phase", "2"], dir);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_dir_resolves_under_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir);
    let root = dir.join("alt_root");
    let out = Command::new(env!("CARGO_BIN_EXE_cocon"))
        .args(["--config", &cfg, "--run", "sub", "dataset"])
        .current_dir(dir)
        .env("COCON_RUN_DIR", &root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("sub/manifest.jsonl").exists());
}
