// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nestfuzz_core::engine::hamming_experiment;
use nestfuzz_core::oracle::seeded_bug_catalog;
use nestfuzz_core::{
    catalog, generate_profile, reproduce, run_campaign, Ablation, AnomalyRecord, BugSet, CampaignConfig, CheckId,
    Executor, RunConfig,
};

#[derive(Parser)]
#[command(name = "nestfuzz", version, about = "Validity-aware fuzzing of a nested VM-entry model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Execution budget.
        #[arg(long)]
        execs: Option<u64>,
        /// Wall-clock budget in seconds.
        #[arg(long)]
        duration: Option<u64>,
        #[arg(long)]
        no_coverage_guidance: bool,
        /// Stage to replace with its passthrough; repeatable.
        #[arg(long, value_parser = ["harness", "validator", "configurator"])]
        disable: Vec<String>,
        /// Seeded bugs: a list such as B1,B4, or all, or none.
        #[arg(long, default_value = "none")]
        bugs: BugSet,
        #[arg(long)]
        no_silent_round: bool,
        #[arg(long, default_value_t = 512)]
        batch: usize,
        #[arg(long, default_value_t = 10_000)]
        sample_every: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a stored anomaly.
    Reproduce {
        /// The record's .bin or .json file.
        file: PathBuf,
        /// Override the recorded bug set.
        #[arg(long)]
        bugs: Option<BugSet>,
        /// Write the replay trace as JSON lines to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Bit distances between random, default and rounded states.
    Hamming {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Summarize a campaign directory.
    Stats { dir: PathBuf },
    /// Print the state field catalog as JSON.
    Fields,
    /// Print the consistency checks, optionally only those a profile enables.
    Checks {
        /// Three hex bytes of feature bits, e.g. ff0f00.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Print the seeded bug catalog.
    Bugs,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fuzz {
            seed,
            workers,
            execs,
            duration,
            no_coverage_guidance,
            disable,
            bugs,
            no_silent_round,
            batch,
            sample_every,
            out,
        } => {
            let mut ablation = Ablation::ALL_ON;
            for stage in &disable {
                ablation.disable(stage)?;
            }
            if execs.is_none() && duration.is_none() {
                bail!("give --execs or --duration");
            }
            let config = CampaignConfig {
                seed,
                workers,
                max_execs: execs,
                max_duration: duration.map(Duration::from_secs),
                coverage_guided: !no_coverage_guidance,
                run: RunConfig { bugs, silent_round: !no_silent_round, ablation },
                batch_size: batch,
                sample_every,
                out_dir: Some(out.clone()),
            };
            let stats = run_campaign(&config)?;
            println!(
                "{} execs in {:.1}s, {} edges, corpus {}, {} anomalies, {} restarts",
                stats.execs,
                stats.elapsed.as_secs_f64(),
                stats.distinct_edges,
                stats.corpus.len(),
                stats.anomalies.len(),
                stats.restarts
            );
            for (bug, at) in &stats.first_hit {
                println!("  {} first seen at exec {at}", bug.short());
            }
            println!("output in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Reproduce { file, bugs, trace } => {
            let verdict = reproduce(&file, bugs)?;
            if let Some(path) = trace {
                let rec = AnomalyRecord::load(&file)?;
                let mut config = rec.config;
                if let Some(b) = bugs {
                    config.bugs = b;
                }
                let input = rec.input.as_ref().context("record without input")?;
                let out = Executor::new(config).run(input, rec.exec_index);
                out.trace.write_jsonl(io::BufWriter::new(fs::File::create(&path)?))?;
            }
            let show = |b: Option<nestfuzz_core::BugId>| b.map_or("none", |b| b.short());
            if verdict.reproduced {
                println!("reproduced {}: {}", show(verdict.observed), verdict.diagnostic.unwrap_or_default());
                Ok(ExitCode::SUCCESS)
            } else {
                println!("not reproduced: expected {}, observed {}", show(verdict.expected), show(verdict.observed));
                Ok(ExitCode::from(1))
            }
        }
        Command::Hamming { n, seed, csv } => {
            let report = hamming_experiment(n, seed)?;
            println!("{:<20} {:>9} {:>9} {:>6} {:>6} {:>6} {:>6} {:>6}", "comparison", "mean", "stddev", "min", "p5", "median", "p95", "max");
            for (name, s) in report.summaries() {
                println!(
                    "{name:<20} {:>9.1} {:>9.1} {:>6} {:>6} {:>6} {:>6} {:>6}",
                    s.mean, s.stddev, s.min, s.p5, s.median, s.p95, s.max
                );
            }
            if let Some(path) = csv {
                report.write_csv(io::BufWriter::new(fs::File::create(&path)?))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { dir } => {
            stats(&dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fields => {
            println!("{}", serde_json::to_string_pretty(&catalog().to_json())?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Checks { profile } => {
            let checks: Vec<CheckId> = match profile {
                Some(hex) => {
                    let bytes = hex::decode(&hex).with_context(|| format!("bad hex {hex:?}"))?;
                    nestfuzz_core::enabled_checks(&generate_profile(&bytes)?)
                }
                None => CheckId::ALL.to_vec(),
            };
            let mut out = io::stdout().lock();
            for c in checks {
                writeln!(out, "{:<34} {:<12} {}", c.name(), format!("{:?}", c.group()), c.description())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bugs => {
            for b in seeded_bug_catalog() {
                println!("{} {:<28} {:<17} {:<26} {}", b.id.short(), b.id.name(), format!("{:?}", b.kind), b.check.name(), b.trigger);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn stats(dir: &Path) -> Result<()> {
    let csv = dir.join("coverage.csv");
    let text = fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
    print!("{text}");
    println!();
    let mut records = Vec::new();
    let anomalies = dir.join("anomalies");
    if anomalies.is_dir() {
        for entry in fs::read_dir(&anomalies)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                records.push((path.clone(), AnomalyRecord::load(&path)?));
            }
        }
    }
    records.sort_by_key(|(_, r)| r.exec_index);
    println!("{:<24} {:<4} {:<17} {:<16} diagnostic", "file", "bug", "kind", "path");
    for (path, r) in &records {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
        let bug = r.bug.map_or("?", |b| b.short());
        println!("{stem:<24} {bug:<4} {:<17} {:016x} {}", format!("{:?}", r.kind), r.path_hash, r.diagnostic);
    }
    let inputs = fs::read_dir(dir.join("corpus")).map(|d| d.count()).unwrap_or(0);
    println!("\n{} anomalies, {inputs} corpus inputs", records.len());
    Ok(())
}
