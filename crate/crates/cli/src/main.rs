//! `smoothlab`: run seeded experiments and compare their outputs.
//!
//! Exit codes: 0 on success, 1 on any configuration or I/O error, 2 when
//! `--assert` is given and one of the run's acceptance checks fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use smoothlab::harness::{compare_runs, run_experiment, ExperimentConfig};

/// Environment variable holding the default parent directory for run outputs.
const OUT_DIR_ENV: &str = "SMOOTHLAB_OUT_DIR";

#[derive(Parser)]
#[command(name = "smoothlab", version, about = "Online processes against adaptive smooth adversaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupling of adaptive smooth draws with uniform proposals.
    Coupling(RunArgs),
    /// Online vector balancing against smooth adversaries.
    Discrepancy(RunArgs),
    /// Discrepancy growth under the slab adversary.
    DiscrepancyLb(RunArgs),
    /// Regret of Hedge or follow-the-leader on threshold unions.
    Learning(RunArgs),
    /// Dispersion of smoothed discontinuities.
    Dispersion(RunArgs),
    /// Ratio of median metrics between two run directories.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; `kind` may be omitted.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; defaults to `$SMOOTHLAB_OUT_DIR/<kind>-seed<seed>`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Exit with status 2 if any acceptance check of the run fails.
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct CompareArgs {
    run_a: PathBuf,
    run_b: PathBuf,
    #[arg(long)]
    metric: String,
    /// Seed of the bootstrap resampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(kind: &str, args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    let Some(obj) = value.as_object_mut() else {
        bail!("{} must hold a JSON object", args.config.display());
    };
    match obj.get("kind") {
        None => {
            obj.insert("kind".into(), kind.into());
        }
        Some(k) if k.as_str() == Some(kind) => {}
        Some(k) => bail!("config kind {k} does not match subcommand {kind:?}"),
    }
    if let Some(seed) = args.seed {
        obj.insert("seed".into(), seed.into());
    }
    if let Some(trials) = args.trials {
        obj.insert("trials".into(), trials.into());
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).context("invalid config")?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(kind: &str, cfg: &ExperimentConfig, args: &RunArgs) -> PathBuf {
    if let Some(dir) = &args.out_dir {
        return dir.clone();
    }
    let parent = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| Path::new("runs").into());
    parent.join(format!("{kind}-seed{}", cfg.seed))
}

/// Returns whether every acceptance check passed.
fn run(kind: &str, args: &RunArgs) -> anyhow::Result<bool> {
    let cfg = load_config(kind, args)?;
    let dir = out_dir(kind, &cfg, args);
    let parallelism = match args.parallelism {
        Some(0) => bail!("--parallelism must be at least 1"),
        Some(p) => p,
        None => std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1),
    };
    let result = run_experiment(&cfg, Some(&dir), parallelism)?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    eprintln!("wrote {}", dir.display());
    let failed: Vec<_> = result.summary.checks.iter().filter(|(_, ok)| !**ok).map(|(name, _)| name.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("failed checks: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn compare(args: &CompareArgs) -> anyhow::Result<()> {
    let report = compare_runs(&args.run_a, &args.run_b, &args.metric, args.seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, args) = match &cli.command {
        Command::Coupling(a) => ("coupling", a),
        Command::Discrepancy(a) => ("discrepancy", a),
        Command::DiscrepancyLb(a) => ("discrepancy-lowerbound", a),
        Command::Learning(a) => ("learning", a),
        Command::Dispersion(a) => ("dispersion", a),
        Command::Compare(a) => {
            return match compare(a) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if args.assert => ExitCode::from(2),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
