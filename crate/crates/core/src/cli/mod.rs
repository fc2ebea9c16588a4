//! `afdm` command-line front end.
//!
//! Exit codes: 0 success, 1 self-test or verification failure, 2 config
//! error, 3 I/O error.

mod selftest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{config_hash, load_config};
use crate::detectors::Fault;
use crate::sim::{run_ber, run_residuals, BerResult, ResidualReport, SimConfig, SNR_DEFINITION};
use crate::{Error, Result};

pub use selftest::{run_selftest, CheckReport, SelftestReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const BER_CSV: &str = "ber.csv";
pub const RESIDUALS_CSV: &str = "residuals.csv";
pub const RESIDUAL_SUMMARY_CSV: &str = "residuals_summary.csv";
pub const RESULT_JSON: &str = "result.json";
pub const MANIFEST_JSON: &str = "manifest.json";

const HASH_PREFIX: &str = "# config_hash: ";

#[derive(Debug, Parser)]
#[command(name = "afdm", version, about = "AFDM link-level simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// BER sweep over the SNR grid.
    Ber(RunArgs),
    /// Per-iteration residuals of the iterative detectors.
    Residuals(RunArgs),
    /// Fast invariant suite.
    Selftest(SelftestArgs),
    /// Checks that the files in an output directory match its manifest.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `workers` (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Dotted-key override, e.g. `profile.num_paths=5`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    ScalarObservationSign,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Deliberately break a detector step (test hook).
    #[arg(long, value_enum)]
    pub inject_fault: Option<FaultArg>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Output directory holding manifest.json.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also check the manifest against this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub timestamp: String,
    pub master_seed: u64,
    pub command: String,
    pub snr_definition: String,
    pub outputs: Vec<OutputFile>,
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::DelayExceedsPrefix { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_with_hash<F>(hash: &str, fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = format!("{HASH_PREFIX}{hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

pub fn ber_csv(res: &BerResult, hash: &str) -> Result<Vec<u8>> {
    csv_with_hash(hash, |w| {
        w.write_record([
            "detector", "snr_db", "bits", "bit_errors", "ber", "frames", "mean_iters", "mean_ops",
        ])?;
        for p in &res.points {
            w.write_record([
                p.detector.clone(),
                p.snr_db.to_string(),
                p.bits_total.to_string(),
                p.bit_errors.to_string(),
                p.ber.to_string(),
                p.frames.to_string(),
                p.mean_iterations.to_string(),
                p.mean_op_count.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn residuals_csv(rep: &ResidualReport, hash: &str) -> Result<Vec<u8>> {
    csv_with_hash(hash, |w| {
        w.write_record(["detector", "trial", "iteration", "residual"])?;
        for t in &rep.traces {
            for (i, r) in t.residuals.iter().enumerate() {
                w.write_record([
                    t.detector.clone(),
                    t.trial.to_string(),
                    (i + 1).to_string(),
                    r.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

pub fn residual_summary_csv(rep: &ResidualReport, hash: &str) -> Result<Vec<u8>> {
    csv_with_hash(hash, |w| {
        w.write_record(["detector", "iteration", "p25", "median", "p75", "count"])?;
        for s in &rep.summary {
            w.write_record([
                s.detector.clone(),
                s.iteration.to_string(),
                s.p25.to_string(),
                s.median.to_string(),
                s.p75.to_string(),
                s.count.to_string(),
            ])?;
        }
        Ok(())
    })
}

fn tagged_json<T: Serialize>(body: &T, hash: &str) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(&Tagged {
        config_hash: hash,
        body,
    })?;
    v.push(b'\n');
    Ok(v)
}

/// Writes the outputs and a manifest covering them. Everything is rendered
/// before the first file is created.
fn write_outputs(
    out: &Path,
    cfg: &SimConfig,
    hash: &str,
    command: &str,
    files: Vec<(&str, Vec<u8>)>,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        config_hash: hash.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        master_seed: cfg.master_seed,
        command: command.to_string(),
        snr_definition: SNR_DEFINITION.to_string(),
        outputs: files
            .iter()
            .map(|(name, bytes)| OutputFile {
                path: name.to_string(),
                sha256: sha256_hex(bytes),
            })
            .collect(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    manifest_bytes.push(b'\n');
    fs::create_dir_all(out)?;
    for (name, bytes) in &files {
        fs::write(out.join(name), bytes)?;
    }
    fs::write(out.join(MANIFEST_JSON), manifest_bytes)?;
    Ok(manifest)
}

fn prepare(args: &RunArgs) -> Result<(SimConfig, String)> {
    let mut cfg = load_config(&args.config, &args.overrides).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", args.config.display()),
        )),
        other => other,
    })?;
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    let hash = config_hash(&cfg)?;
    Ok((cfg, hash))
}

pub fn cmd_ber(args: &RunArgs) -> Result<BerResult> {
    let (cfg, hash) = prepare(args)?;
    log::info!("ber: {} frames x {} SNR points", cfg.num_frames, cfg.snr_db_grid.len());
    let res = run_ber(&cfg)?;
    write_outputs(
        &args.out,
        &cfg,
        &hash,
        "ber",
        vec![
            (BER_CSV, ber_csv(&res, &hash)?),
            (RESULT_JSON, tagged_json(&res, &hash)?),
        ],
    )?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&res.points)?);
    } else {
        println!("{:<10} {:>7} {:>12} {:>8} {:>10}", "detector", "snr_db", "ber", "frames", "failed");
        for p in &res.points {
            println!(
                "{:<10} {:>7} {:>12.4e} {:>8} {:>10}",
                p.detector, p.snr_db, p.ber, p.frames, p.failed_frames
            );
        }
        println!("config_hash {hash}; outputs in {}", args.out.display());
    }
    Ok(res)
}

pub fn cmd_residuals(args: &RunArgs) -> Result<ResidualReport> {
    let (cfg, hash) = prepare(args)?;
    let rep = run_residuals(&cfg)?;
    write_outputs(
        &args.out,
        &cfg,
        &hash,
        "residuals",
        vec![
            (RESIDUALS_CSV, residuals_csv(&rep, &hash)?),
            (RESIDUAL_SUMMARY_CSV, residual_summary_csv(&rep, &hash)?),
            (RESULT_JSON, tagged_json(&rep, &hash)?),
        ],
    )?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rep.summary)?);
    } else {
        println!("{:<10} {:>4} {:>12} {:>12} {:>12}", "detector", "iter", "p25", "median", "p75");
        for s in &rep.summary {
            println!(
                "{:<10} {:>4} {:>12.3e} {:>12.3e} {:>12.3e}",
                s.detector, s.iteration, s.p25, s.median, s.p75
            );
        }
        println!("config_hash {hash}; outputs in {}", args.out.display());
    }
    Ok(rep)
}

pub fn cmd_selftest(args: &SelftestArgs) -> Result<i32> {
    let fault = args.inject_fault.map(|f| match f {
        FaultArg::ScalarObservationSign => Fault::ScalarObservationSign,
    });
    let report = run_selftest(args.seed, fault);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for c in &report.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            println!("{tag} {:<32} {:>6} ms  {}", c.name, c.millis, c.detail);
        }
    }
    if let Some(f) = report.first_failure() {
        eprintln!("selftest failed: {}: {} (seed {})", f.name, f.detail, report.seed);
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

/// Hash embedded in an output file, if any.
pub fn embedded_hash(name: &str, bytes: &[u8]) -> Option<String> {
    let text = std::str::from_utf8(bytes).ok()?;
    if name.ends_with(".csv") {
        text.lines()
            .next()?
            .strip_prefix(HASH_PREFIX)
            .map(|s| s.trim().to_string())
    } else {
        let v: serde_json::Value = serde_json::from_str(text).ok()?;
        v.get("config_hash")?.as_str().map(str::to_string)
    }
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub manifest: PathBuf,
    pub config_hash: String,
    pub problems: Vec<String>,
}

pub fn verify_dir(out: &Path, expected_hash: Option<&str>) -> Result<VerifyReport> {
    let path = out.join(MANIFEST_JSON);
    let manifest: RunManifest = serde_json::from_slice(&fs::read(&path)?)?;
    let mut problems = Vec::new();
    if let Some(h) = expected_hash {
        if h != manifest.config_hash {
            problems.push(format!(
                "manifest hash {} does not match config hash {h}",
                manifest.config_hash
            ));
        }
    }
    if manifest.outputs.is_empty() {
        problems.push("manifest lists no outputs".into());
    }
    for f in &manifest.outputs {
        let bytes = match fs::read(out.join(&f.path)) {
            Ok(b) => b,
            Err(e) => {
                problems.push(format!("{}: {e}", f.path));
                continue;
            }
        };
        if sha256_hex(&bytes) != f.sha256 {
            problems.push(format!("{}: content digest differs from manifest", f.path));
        }
        match embedded_hash(&f.path, &bytes) {
            Some(h) if h == manifest.config_hash => {}
            Some(h) => problems.push(format!("{}: embeds config hash {h}", f.path)),
            None => problems.push(format!("{}: no embedded config hash", f.path)),
        }
    }
    Ok(VerifyReport {
        manifest: path,
        config_hash: manifest.config_hash,
        problems,
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let expected = match &args.config {
        Some(p) => Some(config_hash(&load_config(p, &args.overrides)?)?),
        None => None,
    };
    let report = verify_dir(&args.out, expected.as_deref())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else if report.problems.is_empty() {
        println!("ok {} ({})", report.manifest.display(), report.config_hash);
    } else {
        for p in &report.problems {
            println!("FAIL {p}");
        }
    }
    Ok(if report.problems.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Ber(a) => cmd_ber(a).map(|_| EXIT_OK),
        Command::Residuals(a) => cmd_residuals(a).map(|_| EXIT_OK),
        Command::Selftest(a) => cmd_selftest(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
