use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_afdm");

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/example.toml")
}

fn afdm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ber(out: &Path, extra: &[&str]) -> Output {
    let cfg = example();
    let mut args = vec![
        "ber",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--override",
        "num_frames=4",
    ];
    args.extend_from_slice(extra);
    afdm(&args)
}

fn data_rows(csv: &str) -> Vec<&str> {
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash: "));
    assert_eq!(
        lines.next().unwrap(),
        "detector,snr_db,bits,bit_errors,ber,frames,mean_iters,mean_ops"
    );
    lines.collect()
}

#[test]
fn ber_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = ber(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ber.csv")).unwrap();
    assert_eq!(data_rows(&csv).len(), 4 * 4);
    let result: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("result.json")).unwrap()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(result["config_hash"], manifest["config_hash"]);
    assert_eq!(result["points"].as_array().unwrap().len(), 16);
    assert_eq!(manifest["master_seed"], 1);
    assert!(csv.starts_with(&format!(
        "# config_hash: {}",
        manifest["config_hash"].as_str().unwrap()
    )));
}

#[test]
fn single_snr_override() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ber(dir.path(), &["--override", "snr_db_grid=[10]"]).status.success());
    let csv = fs::read_to_string(dir.path().join("ber.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("10")));
}

#[test]
fn reruns_are_byte_identical_regardless_of_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(ber(a.path(), &["--workers", "1"]).status.success());
    let out = Command::new(BIN)
        .env("AFDM_MAX_WORKERS", "2")
        .args([
            "ber",
            "--config",
            example().to_str().unwrap(),
            "--out",
            b.path().to_str().unwrap(),
            "--override",
            "num_frames=4",
            "--workers",
            "4",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(a.path().join("ber.csv")).unwrap(),
        fs::read(b.path().join("ber.csv")).unwrap()
    );
}

#[test]
fn seed_flag_changes_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(ber(a.path(), &[]).status.success());
    assert!(ber(b.path(), &["--seed", "99"]).status.success());
    assert_ne!(
        fs::read(a.path().join("ber.csv")).unwrap(),
        fs::read(b.path().join("ber.csv")).unwrap()
    );
}

#[test]
fn residuals_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = afdm(&[
        "residuals",
        "--config",
        example().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "num_frames=6",
        "--json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash: "));
    assert_eq!(lines.next().unwrap(), "detector,trial,iteration,residual");
    // two iterative detectors, 6 trials, 5 iterations each
    assert_eq!(lines.count(), 2 * 6 * 5);
    let summary = fs::read_to_string(dir.path().join("residuals_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 + 2 * 5);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed.as_array().unwrap().len(), 10);
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("result.json").exists());
}

#[test]
fn verify_accepts_fresh_output_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ber(dir.path(), &[]).status.success());
    let d = dir.path().to_str().unwrap();
    assert!(afdm(&["verify", "--out", d]).status.success());
    let cfg = example();
    let matching = afdm(&[
        "verify", "--out", d, "--config", cfg.to_str().unwrap(), "--override", "num_frames=4",
    ]);
    assert!(matching.status.success());
    let other = afdm(&["verify", "--out", d, "--config", cfg.to_str().unwrap()]);
    assert_eq!(other.status.code(), Some(1));

    let path = dir.path().join("ber.csv");
    let text = fs::read_to_string(&path).unwrap().replacen("zf,4,", "zf,5,", 1);
    fs::write(&path, text).unwrap();
    let out = afdm(&["verify", "--out", d, "--json"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["problems"][0].as_str().unwrap().contains("ber.csv"));
}

#[test]
fn selftest_passes_and_catches_injected_fault() {
    let ok = afdm(&["selftest"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));

    let bad = afdm(&["selftest", "--inject-fault", "scalar-observation-sign"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("scalar-observation"));

    let json = afdm(&["selftest", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 6);
}

#[test]
fn config_errors_exit_2_with_line_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let src = fs::read_to_string(example()).unwrap().replace("num_frames = 100", "num_frames = 0");
    fs::write(&cfg, src).unwrap();
    let out_dir = dir.path().join("out");
    let out = afdm(&[
        "ber",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:7") && err.contains("num_frames"), "{err}");
    assert!(!out_dir.exists());

    let syntax = dir.path().join("syntax.toml");
    fs::write(&syntax, "frame_len = 64\nnum_frames = [\n").unwrap();
    let out = afdm(&["ber", "--config", syntax.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("syntax.toml:"));

    let unknown = ber(dir.path(), &["--override", "detectors.3.bogus=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(afdm(&["ber"]).status.code(), Some(2));
}

#[test]
fn missing_files_exit_3() {
    let out = afdm(&["ber", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(out.status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let out = afdm(&["verify", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
