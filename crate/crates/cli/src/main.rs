//! Command-line entry points for the operator laboratory: claim audits,
//! feasibility runs, seed sweeps, the zoo catalog, and golden-run
//! verification.
//!
//! Exit codes: 0 when a run completes (failing claims are findings, not
//! errors), 2 on configuration or runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use operlab_core::harness::{run_audit, run_feasibility, sweep, verify_golden, RunConfig};
use operlab_core::zoo;

#[derive(Parser)]
#[command(
    name = "operlab",
    version,
    about = "Numerical laboratory for Krylov forms, window constraint families, and invariant-subspace feasibility audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configuration's `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the configuration's `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Append the degenerate truncation windows (k, n) to window lists.
    #[arg(long)]
    include_degenerate_windows: bool,
    /// Cross-check feasibility verdicts against the grid oracle where the
    /// dimension guard admits it.
    #[arg(long)]
    grid_oracle: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the configured claims over the zoo; writes audit.csv,
    /// summary.json, and witness artifacts.
    Audit(RunArgs),
    /// Search the configured feasibility problems; writes one
    /// report-<operator>-<family>.json per pair.
    Feasibility(RunArgs),
    /// Replicate random zoo entries over a seed range and aggregate
    /// per-claim pass rates and defect-decay fits into sweep.json.
    Sweep(RunArgs),
    /// Operator zoo helpers.
    #[command(subcommand)]
    Zoo(ZooCommand),
    /// Re-run the checked-in golden configuration and byte-compare its
    /// audit.csv and summary.json.
    VerifyGolden {
        /// Directory for the re-run's outputs (defaults to a scratch
        /// directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ZooCommand {
    /// List the available operator kinds.
    List,
}

fn load(args: &RunArgs) -> Result<(RunConfig, Option<PathBuf>, PathBuf)> {
    let (mut cfg, base_dir) = RunConfig::from_file(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    cfg.include_degenerate_windows |= args.include_degenerate_windows;
    cfg.grid_oracle |= args.grid_oracle;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, base_dir, out))
}

fn base_dir_ref(base: &Option<PathBuf>) -> Option<&Path> {
    base.as_deref()
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Audit(args) => {
            let (cfg, base, out) = load(&args)?;
            let outcome = run_audit(&cfg, base_dir_ref(&base), &out)?;
            let claims = outcome.summary["claims"]
                .as_object()
                .expect("summary carries claim counts");
            for (label, counts) in claims {
                println!(
                    "claim {label}: pass {} fail {} skip {} vacuous {}",
                    counts["pass"], counts["fail"], counts["skip"], counts["vacuous"]
                );
            }
            println!("{} rows -> {}", outcome.rows.len(), out.display());
        }
        Command::Feasibility(args) => {
            let (cfg, base, out) = load(&args)?;
            let records = run_feasibility(&cfg, base_dir_ref(&base), &out)?;
            for r in &records {
                let verdict = r.report["verdict"].as_str().unwrap_or("skipped");
                let agreement = match r.report["oracle_agreement"] {
                    serde_json::Value::Bool(b) => format!(" oracle_agreement={b}"),
                    _ => String::new(),
                };
                println!(
                    "{} [{}]: {verdict}{agreement} -> {}",
                    r.operator_id,
                    r.family.as_str(),
                    r.rel_path
                );
            }
        }
        Command::Sweep(args) => {
            let (cfg, base, out) = load(&args)?;
            let doc = sweep(&cfg, base_dir_ref(&base), &out)?;
            let claims = doc["claims"].as_object().expect("sweep carries claim stats");
            for (label, stats) in claims {
                println!("claim {label}: pass_rate {}", stats["pass_rate"]);
            }
            println!("sweep -> {}", out.join("sweep.json").display());
        }
        Command::Zoo(ZooCommand::List) => {
            for (kind, blurb) in zoo::kind_catalog() {
                println!("{kind:<20} {blurb}");
            }
        }
        Command::VerifyGolden { out } => {
            let out_path = match out {
                Some(p) => p,
                None => scratch_dir()?,
            };
            let outcome = verify_golden(&out_path)?;
            println!(
                "audit.csv: {}",
                if outcome.audit_matches { "match" } else { "MISMATCH" }
            );
            println!(
                "summary.json: {}",
                if outcome.summary_matches { "match" } else { "MISMATCH" }
            );
            if !(outcome.audit_matches && outcome.summary_matches) {
                anyhow::bail!("golden run drifted (outputs kept in {})", out_path.display());
            }
        }
    }
    Ok(())
}

/// Unique scratch directory without extra dependencies.
fn scratch_dir() -> Result<PathBuf> {
    let base = std::env::temp_dir().join(format!(
        "operlab-golden-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::create_dir_all(&base)?;
    Ok(base)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
