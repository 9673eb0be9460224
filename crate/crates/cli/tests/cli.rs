//! Binary-level checks: argument handling, config validation paths, exit
//! codes, and the single-member-pool evaluation example.

use std::path::Path;
use std::process::Command;

fn fusebench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusebench"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const IDENTITY_ONLY: &str = r#"
seed = 3
out_dir = "out"

[corpus]
dir = "clean"
count = 3
size = 48
channels = 1

[[pool]]
name = "identity"
kind = "classic"
filter = "identity"

[dataset]
patch = 32
train_count = 2
val_count = 1
test_count = 2

[[noise.train]]
kind = "awgn"
sigma = 20.0
seed = 1

[[noise.val]]
kind = "awgn"
sigma = 20.0
seed = 2

[[noise.test]]
kind = "awgn"
sigma = 20.0
seed = 3

[eval]
include_bde = false

[scorer]
levels = 2
base_channels = 4

[schedule]
batch = 2
patch = 16
lr_init = 1e-3
epochs = 1
iters_per_epoch = 2
"#;

#[test]
fn config_errors_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "seed = \"not a number\"");
    let out = fusebench()
        .args(["evaluate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    let missing = dir.path().join("nope.toml");
    let out = fusebench()
        .args(["evaluate", "--config"])
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "missing config file is a missing artifact");
}

#[test]
fn missing_artifacts_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), IDENTITY_ONLY);
    // Evaluate without synthesize: the dataset index is missing.
    let out = fusebench()
        .args(["evaluate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("dataset index not found") && stderr.contains("synthesize"),
        "error must name the missing path and the fix: {stderr}"
    );
}

/// Single-member pool with fusion disabled: oracle equals the identity
/// member equals the noisy-input PSNR.
#[test]
fn identity_pool_report_rows_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), IDENTITY_ONLY);
    let ok = fusebench()
        .args(["synthesize", "--config"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(ok.success());
    let out = fusebench()
        .args(["evaluate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let report = fusebench::report::RunReport::load(dir.path().join("out/report_full.toml")).unwrap();
    let identity = report.method("identity").unwrap().psnr;
    let oracle = report.method("oracle").unwrap().psnr;
    let uniform = report.method("uniform_avg").unwrap().psnr;
    assert!((identity - oracle).abs() < 1e-9);
    assert!((identity - uniform).abs() < 1e-9);
    assert!(report.method("bde").is_none(), "bde disabled in config");
}

#[test]
fn unknown_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), IDENTITY_ONLY);
    let out = fusebench()
        .args(["evaluate", "--variant", "bogus", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

const CLASSIC_PAIR: &str = r#"
seed = 11
out_dir = "out"

[corpus]
dir = "clean"
count = 4
size = 48
channels = 1

[[pool]]
name = "gauss1"
kind = "classic"
filter = "gaussian"
radius = 1
sigma = 0.8
[[pool]]
name = "identity"
kind = "classic"
filter = "identity"

[dataset]
patch = 32
train_count = 4
val_count = 2
test_count = 2

[[noise.train]]
kind = "awgn"
sigma = 25.0
seed = 1

[[noise.val]]
kind = "awgn"
sigma = 25.0
seed = 2

[[noise.test]]
kind = "awgn"
sigma = 25.0
seed = 3

[scorer]
levels = 2
base_channels = 4

[schedule]
batch = 2
patch = 16
lr_init = 1e-3
epochs = 1
iters_per_epoch = 10
"#;

/// Ablate trains missing variants, emits one row per requested variant, and
/// echoes the configuration into the artifact.
#[test]
fn ablate_emits_requested_rows_with_config_echo() {
    use fusebench::commands::{cmd_ablate, cmd_synthesize};
    use fusebench::config::{ExperimentConfig, Variant};

    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CLASSIC_PAIR);
    let cfg = ExperimentConfig::load(&path, None, None, None).unwrap();
    cmd_synthesize(&cfg).unwrap();
    let rows = cmd_ablate(&cfg, &[Variant::Full, Variant::MinusFuse]).unwrap();
    assert_eq!(rows.len(), 2, "one row per requested variant");
    assert_eq!(rows[0].variant, "full");
    assert_eq!(rows[1].variant, "minus_fuse");

    let table = std::fs::read_to_string(dir.path().join("out/ablation.toml")).unwrap();
    assert!(table.contains("[config_echo]"), "artifact carries the config echo");
    let parsed: toml::Table = toml::from_str(&table).unwrap();
    assert!(parsed.contains_key("rows"));
}

#[test]
fn seed_override_changes_synthesized_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), IDENTITY_ONLY);
    assert!(fusebench()
        .args(["synthesize", "--config"])
        .arg(&path)
        .status()
        .unwrap()
        .success());
    let manifest = dir.path().join("out/data/train_0/manifest.toml");
    let a = std::fs::read(&manifest).unwrap();
    assert!(fusebench()
        .args(["synthesize", "--seed", "99", "--config"])
        .arg(&path)
        .status()
        .unwrap()
        .success());
    let b = std::fs::read(&manifest).unwrap();
    assert_ne!(a, b, "a different seed must synthesize different data");
}
