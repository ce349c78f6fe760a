//! End-to-end checks of the command-line interface: artifact layout,
//! exit codes, and byte-level determinism of repeated runs.

use std::path::Path;
use std::process::Command;

fn gridfuse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridfuse"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        r#"
[dataset]
grid = "two-machine-three-bus"
n_samples = 5
steps = 80
seed = 3

[model]
seed = 7

[training]
epochs = 2
slices_per_epoch = 8
batch = 4
val_slices = 4
slice_table = [[10, 0.6], [20, 0.4]]

[output]
dir = "{}"
"#,
        dir.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn gen_data_train_eval_produce_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());

    let out = gridfuse()
        .args(["--config"])
        .arg(&cfg)
        .arg("gen-data")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "gen-data failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("dataset/meta.json").exists());
    assert!(tmp.path().join("gen-data-manifest.json").exists());

    let out = gridfuse()
        .args(["--config"])
        .arg(&cfg)
        .arg("train")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("model.bin").exists());
    assert!(tmp.path().join("stats.json").exists());
    assert!(tmp.path().join("train_log.csv").exists());

    let out = gridfuse()
        .args(["--config"])
        .arg(&cfg)
        .arg("eval")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("scope,relative_derivative_error"));

    let out = gridfuse()
        .args(["--config"])
        .arg(&cfg)
        .arg("eigen")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "eigen failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eigen = std::fs::read_to_string(tmp.path().join("eigen.csv")).unwrap();
    assert!(eigen.contains("truth") && eigen.contains("learned"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let read = |p: &Path| {
        (
            std::fs::read(p.join("dataset/meta.json")).unwrap(),
            std::fs::read(p.join("model.bin")).unwrap(),
            std::fs::read(p.join("train-manifest.json")).unwrap(),
        )
    };
    let run = || {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = write_config(tmp.path());
        for cmd in ["gen-data", "train"] {
            let out = gridfuse()
                .args(["--config"])
                .arg(&cfg)
                .arg(cmd)
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{cmd} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        read(tmp.path())
    };
    let (data_a, model_a, _) = run();
    let (data_b, model_b, _) = run();
    assert_eq!(
        data_a, data_b,
        "dataset bytes differ between identical runs"
    );
    assert_eq!(
        model_a, model_b,
        "trained weights differ between identical runs"
    );
}

#[test]
fn invalid_config_exits_one_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[dataset]\ngrid = \"two-machine-three-bus\"\nn_samples = 0\nseed = 1\n",
    )
    .unwrap();
    let out = gridfuse()
        .args(["--config"])
        .arg(&cfg)
        .arg("gen-data")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("n_samples"),
        "stderr should name the field: {err}"
    );
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[dataset]\ngrid = \"two-machine-three-bus\"\nn_samples = 4\nseed = 1\nbogus = 2\n",
    )
    .unwrap();
    let out = gridfuse()
        .args(["--config"])
        .arg(&cfg)
        .arg("gen-data")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn usage_error_exits_two() {
    let out = gridfuse().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_model_reports_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = gridfuse()
        .args(["--config"])
        .arg(&cfg)
        .arg("eval")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}
