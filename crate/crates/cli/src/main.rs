//! Command-line front end: run and sweep experiments from config files,
//! run verification suites, and summarize result directories.

use clap::{Parser, Subcommand};
use imil::harness::{self, ExperimentConfig, SweepOutput};
use imil::verify::{run_suite, SUITES};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "imil", version, about = "Interactive imitation learning testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment in a config file with the seed list it declares.
    Run {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Directory for results.csv, summary.json, and optional histories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a config across a seed range, overriding its seed list.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `a..b`, or a single seed.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run verification suites. Exit code 0 only if every check passes.
    Verify {
        /// Suite name, a comma-separated list, or `all`.
        #[arg(long, default_value = "all")]
        suite: String,
        /// List available suite names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Summarize a results directory with bootstrap quantile intervals.
    Report {
        /// Directory holding a results.csv produced by run or sweep.
        #[arg(long = "in")]
        input: PathBuf,
        /// Lower and upper bootstrap quantiles for the evaluation mean.
        #[arg(long, default_value = "0.1,0.9")]
        quantiles: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> imil::Result<bool> {
    match command {
        Command::Run { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let seeds = config.seeds.clone();
            sweep_and_print(&config, &seeds, &out)
        }
        Command::Sweep { config, seeds, out } => {
            let config = ExperimentConfig::load(&config)?;
            let seeds = parse_seed_range(&seeds)?;
            sweep_and_print(&config, &seeds, &out)
        }
        Command::Verify { suite, list } => {
            if list {
                for name in SUITES {
                    println!("{name}");
                }
                return Ok(true);
            }
            let mut all_passed = true;
            for name in resolve_suites(&suite)? {
                let report = run_suite(name)?;
                println!("{}", report.summary_line());
                for line in &report.details {
                    println!("    {line}");
                }
                all_passed &= report.passed;
            }
            Ok(all_passed)
        }
        Command::Report { input, quantiles } => {
            let (lo, hi) = parse_quantiles(&quantiles)?;
            report(&input, lo, hi)
        }
    }
}

fn sweep_and_print(config: &ExperimentConfig, seeds: &[u64], out: &Path) -> imil::Result<bool> {
    let SweepOutput { rows, failures, summaries } = harness::run_sweep_to_dir(config, seeds, out)?;
    println!("{} result rows over {} seeds -> {}", rows.len(), seeds.len(), out.display());
    // One line per variant at its last summarized round.
    let mut seen: Vec<&str> = Vec::new();
    for s in summaries.iter().rev() {
        if seen.contains(&s.algo.as_str()) {
            continue;
        }
        seen.push(&s.algo);
        println!(
            "  {} round {}: eval {:.4} [{:.4}, {:.4}], median regret {:.4}",
            s.algo, s.round, s.eval_mean, s.eval_lo, s.eval_hi, s.reg_median
        );
    }
    for f in &failures {
        println!("  FAILED {} seed {}: {}", f.algo, f.seed, f.message);
    }
    Ok(failures.is_empty())
}

fn report(dir: &Path, lo: f64, hi: f64) -> imil::Result<bool> {
    let path = dir.join("results.csv");
    let text = std::fs::read_to_string(&path)?;
    let rows = harness::parse_results_csv(&text)?;
    let summaries = harness::summarize_rows(&rows, lo, hi)?;
    println!(
        "{:<20} {:>6} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "algo", "round", "seeds", "eval_mean", "eval_median", "lo", "hi", "reg_median"
    );
    for s in &summaries {
        println!(
            "{:<20} {:>6} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            s.algo, s.round, s.seeds, s.eval_mean, s.eval_median, s.eval_lo, s.eval_hi,
            s.reg_median
        );
    }
    println!("{} rows, {} summary cells, quantiles {lo}..{hi}", rows.len(), summaries.len());
    Ok(true)
}

/// Maps a requested suite name to canonical suites. Accepts the canonical
/// names, a few grouped aliases, comma-separated lists, and `all`.
fn resolve_suites(request: &str) -> imil::Result<Vec<&'static str>> {
    let mut out = Vec::new();
    for part in request.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let expansion: Vec<&'static str> = match part {
            "all" => SUITES.to_vec(),
            "pdl" => vec!["value-identity"],
            "counterexample" => vec!["trap-exact", "trap-dynamics"],
            "bias" => vec!["bias-bound", "unbiasedness"],
            other => match SUITES.iter().find(|s| **s == other) {
                Some(name) => vec![name],
                None => {
                    return Err(imil::Error::InvalidConfig(format!(
                        "unknown suite {other:?}; available: all, pdl, counterexample, bias, {}",
                        SUITES.join(", ")
                    )))
                }
            },
        };
        for name in expansion {
            if !out.contains(&name) {
                out.push(name);
            }
        }
    }
    if out.is_empty() {
        return Err(imil::Error::InvalidConfig("no suites requested".into()));
    }
    Ok(out)
}

/// Parses `a..b` (inclusive on both ends), `a..=b`, or a single seed.
fn parse_seed_range(text: &str) -> imil::Result<Vec<u64>> {
    let bad = |msg: &str| imil::Error::InvalidConfig(format!("seed range {text:?}: {msg}"));
    let parse_one =
        |s: &str| s.trim().parse::<u64>().map_err(|_| bad("expected an unsigned integer"));
    if let Some((a, b)) = text.split_once("..") {
        let lo = parse_one(a)?;
        let hi = parse_one(b.strip_prefix('=').unwrap_or(b))?;
        if lo > hi {
            return Err(bad("empty range"));
        }
        Ok((lo..=hi).collect())
    } else {
        Ok(vec![parse_one(text)?])
    }
}

fn parse_quantiles(text: &str) -> imil::Result<(f64, f64)> {
    let bad = |msg: &str| imil::Error::InvalidConfig(format!("quantiles {text:?}: {msg}"));
    let (a, b) = text.split_once(',').ok_or_else(|| bad("expected `lo,hi`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| bad("lower bound is not a number"))?;
    let hi: f64 = b.trim().parse().map_err(|_| bad("upper bound is not a number"))?;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(bad("need 0 <= lo < hi <= 1"));
    }
    Ok((lo, hi))
}
