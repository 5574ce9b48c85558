// SPDX-License-Identifier: Apache-2.0

//! Batch-synchronous campaign driver. The coordinator generates each batch,
//! workers execute slices of it on private oracles, and results are folded in
//! input order, so a campaign with an exec budget is deterministic for any
//! worker count.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnomalyRecord, Executor, FuzzInput, Partition, RunConfig};
use crate::coverage::CoverageMap;
use crate::error::{Error, Result};
use crate::oracle::BugId;

/// Probability of mutating a corpus entry instead of drawing a fresh input.
pub const CORPUS_MUTATE_RATE: f64 = 0.6;
pub const MAX_HAVOC_OPS: usize = 8;
pub const MAX_BLOCK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub seed: u64,
    pub workers: usize,
    pub max_execs: Option<u64>,
    pub max_duration: Option<Duration>,
    pub coverage_guided: bool,
    pub run: RunConfig,
    pub batch_size: usize,
    /// Coverage sample interval in executions.
    pub sample_every: u64,
    pub out_dir: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn with_execs(seed: u64, execs: u64) -> Self {
        Self {
            seed,
            workers: 1,
            max_execs: Some(execs),
            max_duration: None,
            coverage_guided: true,
            run: RunConfig::default(),
            batch_size: 512,
            sample_every: 10_000,
            out_dir: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.max_execs.is_none() && self.max_duration.is_none() {
            return Err(Error::InvalidConfig("set an exec budget or a duration".into()));
        }
        if self.workers == 0 || self.batch_size == 0 || self.sample_every == 0 {
            return Err(Error::InvalidConfig("workers, batch size and sample interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub input: FuzzInput,
    pub discovered_edges: usize,
    pub exec_index: u64,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub execs: u64,
    pub distinct_edges: usize,
    pub corpus_size: usize,
    pub anomalies: usize,
}

#[derive(Debug, Clone)]
pub struct CampaignStats {
    pub execs: u64,
    pub distinct_edges: usize,
    pub corpus: Vec<CorpusEntry>,
    /// Deduplicated anomalies in discovery order.
    pub anomalies: Vec<AnomalyRecord>,
    /// First execution index at which each bug surfaced.
    pub first_hit: BTreeMap<BugId, u64>,
    pub restarts: u64,
    pub elapsed: Duration,
    pub series: Vec<CoveragePoint>,
    pub coverage: CoverageMap,
}

impl CampaignStats {
    pub fn bugs_found(&self) -> BTreeSet<BugId> {
        self.first_hit.keys().copied().collect()
    }

    pub fn write_coverage_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "execs,distinct_edges,corpus_size,anomalies")?;
        for p in &self.series {
            writeln!(out, "{},{},{},{}", p.execs, p.distinct_edges, p.corpus_size, p.anomalies)?;
        }
        Ok(())
    }

    pub fn summary_json(&self, config: &CampaignConfig) -> serde_json::Value {
        serde_json::json!({
            "config": config,
            "execs": self.execs,
            "distinct_edges": self.distinct_edges,
            "corpus_size": self.corpus.len(),
            "restarts": self.restarts,
            "elapsed_secs": self.elapsed.as_secs_f64(),
            "first_hit": self.first_hit.iter().map(|(b, i)| (b.short().to_string(), *i)).collect::<BTreeMap<_, _>>(),
            "anomalies": self.anomalies.iter().map(|a| serde_json::json!({
                "file": a.file_stem(),
                "bug": a.bug,
                "kind": a.kind,
                "path_hash": format!("{:016x}", a.path_hash),
                "diagnostic": a.diagnostic,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Outcome of one execution as reported by a worker.
struct ExecResult {
    edges: Vec<(u16, u8)>,
    anomaly: Option<AnomalyRecord>,
}

struct Job {
    start: u64,
    inputs: Vec<FuzzInput>,
}

fn execute_slice(exec: &mut Executor, start: u64, inputs: &[FuzzInput]) -> Vec<ExecResult> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let (cov, anomaly) = exec.run_fast(input, start + i as u64);
            ExecResult { edges: cov.entries(), anomaly }
        })
        .collect()
}

fn worker(config: RunConfig, jobs: Receiver<Job>, results: Sender<(u64, Vec<ExecResult>)>) -> u64 {
    let mut exec = Executor::new(config);
    for job in jobs {
        let out = execute_slice(&mut exec, job.start, &job.inputs);
        if results.send((job.start, out)).is_err() {
            break;
        }
    }
    exec.restarts()
}

/// Byte-level havoc within one partition: bit flips, byte replacement and
/// block copies.
pub fn havoc<R: Rng + ?Sized>(input: &mut FuzzInput, rng: &mut R) {
    let part = Partition::ALL[rng.random_range(0..Partition::ALL.len())];
    let bytes = input.part_mut(part);
    let len = bytes.len();
    for _ in 0..rng.random_range(1..=MAX_HAVOC_OPS) {
        match rng.random_range(0..3) {
            0 => {
                let i = rng.random_range(0..len);
                bytes[i] ^= 1 << rng.random_range(0..8);
            }
            1 => bytes[rng.random_range(0..len)] = rng.random(),
            _ => {
                let n = rng.random_range(1..=MAX_BLOCK);
                let src = rng.random_range(0..=len - n);
                let dst = rng.random_range(0..=len - n);
                bytes.copy_within(src..src + n, dst);
            }
        }
    }
}

struct Coordinator<'a> {
    config: &'a CampaignConfig,
    rng: ChaCha8Rng,
    global: CoverageMap,
    corpus: Vec<CorpusEntry>,
    chooser: Option<WeightedIndex<u64>>,
    chooser_len: usize,
    anomalies: Vec<AnomalyRecord>,
    seen: HashSet<(Option<BugId>, u64)>,
    first_hit: BTreeMap<BugId, u64>,
    series: Vec<CoveragePoint>,
    execs: u64,
    pending_parents: Vec<Option<usize>>,
}

impl Coordinator<'_> {
    fn next_input(&mut self, first: bool) -> (FuzzInput, Option<usize>) {
        if first {
            return (FuzzInput::zeroed(), None);
        }
        if self.config.coverage_guided && !self.corpus.is_empty() && self.rng.random_bool(CORPUS_MUTATE_RATE) {
            if self.chooser_len != self.corpus.len() {
                let weights = self.corpus.iter().map(|c| c.discovered_edges as u64 + 1);
                self.chooser = Some(WeightedIndex::new(weights).expect("weights are positive"));
                self.chooser_len = self.corpus.len();
            }
            let idx = self.chooser.as_ref().expect("built above").sample(&mut self.rng);
            let mut input = self.corpus[idx].input.clone();
            havoc(&mut input, &mut self.rng);
            (input, Some(idx))
        } else {
            (FuzzInput::random(&mut self.rng), None)
        }
    }

    fn batch(&mut self, n: usize) -> Vec<FuzzInput> {
        self.pending_parents.clear();
        (0..n)
            .map(|i| {
                let (input, parent) = self.next_input(self.execs == 0 && i == 0);
                self.pending_parents.push(parent);
                input
            })
            .collect()
    }

    fn sample(&mut self) {
        self.series.push(CoveragePoint {
            execs: self.execs,
            distinct_edges: self.global.distinct(),
            corpus_size: self.corpus.len(),
            anomalies: self.anomalies.len(),
        });
    }

    fn fold(&mut self, inputs: Vec<FuzzInput>, results: Vec<ExecResult>) -> Result<()> {
        for ((input, res), parent) in inputs.into_iter().zip(results).zip(self.pending_parents.clone()) {
            let index = self.execs;
            self.execs += 1;
            let fresh = self.global.merge_entries(&res.edges);
            if fresh > 0 {
                if let Some(dir) = &self.config.out_dir {
                    let path = dir.join("corpus").join(format!("{index:012}.bin"));
                    std::fs::write(path, input.as_bytes())?;
                }
                self.corpus.push(CorpusEntry { input, discovered_edges: fresh, exec_index: index, parent });
            }
            if let Some(a) = res.anomaly {
                if let Some(b) = a.bug {
                    self.first_hit.entry(b).or_insert(index);
                }
                if self.seen.insert(a.dedup_key()) {
                    if let Some(dir) = &self.config.out_dir {
                        a.save(&dir.join("anomalies"))?;
                    }
                    self.anomalies.push(a);
                }
            }
            if self.execs.is_multiple_of(self.config.sample_every) {
                self.sample();
            }
        }
        Ok(())
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("corpus"))?;
    std::fs::create_dir_all(dir.join("anomalies"))?;
    Ok(())
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignStats> {
    config.check()?;
    if let Some(dir) = &config.out_dir {
        prepare_out_dir(dir)?;
    }
    let started = Instant::now();
    let mut co = Coordinator {
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        global: CoverageMap::new(),
        corpus: Vec::new(),
        chooser: None,
        chooser_len: 0,
        anomalies: Vec::new(),
        seen: HashSet::new(),
        first_hit: BTreeMap::new(),
        series: Vec::new(),
        execs: 0,
        pending_parents: Vec::new(),
    };
    let remaining = |co: &Coordinator| -> usize {
        let by_execs = config.max_execs.map_or(usize::MAX, |m| m.saturating_sub(co.execs) as usize);
        let timed_out = config.max_duration.is_some_and(|d| started.elapsed() >= d);
        if timed_out {
            0
        } else {
            by_execs.min(config.batch_size)
        }
    };

    let restarts = if config.workers == 1 {
        let mut exec = Executor::new(config.run);
        loop {
            let n = remaining(&co);
            if n == 0 {
                break;
            }
            let inputs = co.batch(n);
            let results = execute_slice(&mut exec, co.execs, &inputs);
            co.fold(inputs, results)?;
        }
        exec.restarts()
    } else {
        std::thread::scope(|scope| -> Result<u64> {
            let (job_tx, job_rx) = unbounded::<Job>();
            let (res_tx, res_rx) = unbounded();
            let handles: Vec<_> = (0..config.workers)
                .map(|_| {
                    let (rx, tx) = (job_rx.clone(), res_tx.clone());
                    scope.spawn(move || worker(config.run, rx, tx))
                })
                .collect();
            drop(res_tx);
            let outcome = (|| -> Result<()> {
                loop {
                    let n = remaining(&co);
                    if n == 0 {
                        return Ok(());
                    }
                    let inputs = co.batch(n);
                    let chunk = n.div_ceil(config.workers);
                    let mut jobs = 0;
                    for (k, part) in inputs.chunks(chunk).enumerate() {
                        let start = co.execs + (k * chunk) as u64;
                        job_tx.send(Job { start, inputs: part.to_vec() }).expect("workers alive");
                        jobs += 1;
                    }
                    let mut parts: Vec<(u64, Vec<ExecResult>)> =
                        (0..jobs).map(|_| res_rx.recv().expect("workers alive")).collect();
                    parts.sort_by_key(|(start, _)| *start);
                    let results = parts.into_iter().flat_map(|(_, r)| r).collect();
                    co.fold(inputs, results)?;
                }
            })();
            drop(job_tx);
            let restarts = handles.into_iter().map(|h| h.join().expect("worker panicked")).sum();
            outcome.map(|_| restarts)
        })?
    };

    if co.series.last().is_none_or(|p| p.execs != co.execs) {
        co.sample();
    }
    let stats = CampaignStats {
        execs: co.execs,
        distinct_edges: co.global.distinct(),
        corpus: co.corpus,
        anomalies: co.anomalies,
        first_hit: co.first_hit,
        restarts,
        elapsed: started.elapsed(),
        series: co.series,
        coverage: co.global,
    };
    if let Some(dir) = &config.out_dir {
        stats.write_coverage_csv(std::fs::File::create(dir.join("coverage.csv"))?)?;
        std::fs::write(dir.join("campaign.json"), serde_json::to_vec_pretty(&stats.summary_json(config))?)?;
    }
    Ok(stats)
}
