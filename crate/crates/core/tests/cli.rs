use std::fs;
use std::process::Command;

fn isample() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isample"))
}

const SMALL: &str = r#"
seeds = [0]
[dataset]
source = "synthetic"
[dataset.blobs]
n = 64
[[cells]]
strategy = "loss"
[train]
iterations = 30
batch_size = 8
[report]
window = 5
"#;

#[test]
fn gencfg_emits_a_parseable_config() {
    let out = isample().arg("gencfg").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[train]") && text.contains("# "));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.toml");
    fs::write(&path, &text).unwrap();
    isample::parse_config(&path).unwrap();
}

#[test]
fn run_writes_to_env_override_and_analyze_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("elsewhere");
    let out = isample()
        .arg("run")
        .arg(&cfg)
        .env("ISAMPLE_OUTPUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("run_loss_k0.5_cadaptive_seed0.csv").exists());
    assert!(out_dir.join("summary.csv").exists());

    let out = isample()
        .arg("analyze")
        .arg(&out_dir)
        .args(["--window", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("run_loss_k0.5_cadaptive"));
}

#[test]
fn bad_config_names_the_key_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        SMALL.replace("strategy = \"loss\"", "strategy = \"loss\"\nk = 1.5"),
    )
    .unwrap();
    let out = isample().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("cells[0].k") && err.contains("k <= 1"),
        "{err}"
    );

    fs::write(&cfg, SMALL.replace("batch_size", "batchsize")).unwrap();
    let out = isample().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("batchsize") && err.contains("exp.toml:"),
        "{err}"
    );
}

#[test]
fn aborted_runs_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        format!("{SMALL}[train.optimizer]\nlearning_rate = 1e300\n"),
    )
    .unwrap();
    let out = isample()
        .arg("run")
        .arg(&cfg)
        .env("ISAMPLE_OUTPUT_DIR", dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("aborted"));
    assert!(dir
        .path()
        .join("out/run_loss_k0.5_cadaptive_seed0.csv")
        .exists());
}
