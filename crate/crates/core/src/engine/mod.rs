// SPDX-License-Identifier: Apache-2.0

//! Per-input pipeline, anomaly records and replay. Campaign scheduling lives
//! in [`campaign`], the state-distance experiment in [`hamming`].

pub mod campaign;
pub mod hamming;

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::capability::{generate_profile, CapabilityProfile};
use crate::coverage::CoverageMap;
use crate::error::{Error, Result};
use crate::harness::{execute, execute_quiet, ExecutionTrace, HarnessProgram, TerminalStatus};
use crate::mutator::{mutate, parse_directive, MutationDirective};
use crate::oracle::{diagnostic_line, AnomalyKind, BugId, BugSet, Oracle, OracleConfig};
use crate::state::VmState;
use crate::validator::round;

pub use campaign::{run_campaign, CampaignConfig, CampaignStats, CoveragePoint};
pub use hamming::{hamming_experiment, HammingReport, Summary};

pub const INPUT_BYTES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    VcpuConfig,
    InitSequence,
    RuntimeSteps,
    VmcsSeed,
    MutationDirectives,
}

impl Partition {
    pub const ALL: [Partition; 5] =
        [Self::VcpuConfig, Self::InitSequence, Self::RuntimeSteps, Self::VmcsSeed, Self::MutationDirectives];

    pub const fn range(self) -> Range<usize> {
        match self {
            Self::VcpuConfig => 0..256,
            Self::InitSequence => 256..512,
            Self::RuntimeSteps => 512..1024,
            Self::VmcsSeed => 1024..1792,
            Self::MutationDirectives => 1792..2048,
        }
    }
}

/// Exactly 2048 bytes split into fixed partitions.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FuzzInput(Box<[u8; INPUT_BYTES]>);

impl std::fmt::Debug for FuzzInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FuzzInput({:02x?}..)", &self.0[..8])
    }
}

impl FuzzInput {
    pub fn zeroed() -> Self {
        Self(Box::new([0; INPUT_BYTES]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; INPUT_BYTES] = bytes
            .try_into()
            .map_err(|_| Error::WrongLength { expected: INPUT_BYTES, actual: bytes.len() })?;
        Ok(Self(Box::new(arr)))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut input = Self::zeroed();
        rng.fill_bytes(&mut input.0[..]);
        input
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0[..]
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.0[..]
    }

    pub fn part(&self, p: Partition) -> &[u8] {
        &self.0[p.range()]
    }

    pub fn part_mut(&mut self, p: Partition) -> &mut [u8] {
        &mut self.0[p.range()]
    }
}

/// Pipeline stages that can be replaced by their passthrough.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub harness_on: bool,
    pub validator_on: bool,
    pub configurator_on: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::ALL_ON
    }
}

impl Ablation {
    pub const ALL_ON: Ablation = Ablation { harness_on: true, validator_on: true, configurator_on: true };
    pub const ALL_OFF: Ablation = Ablation { harness_on: false, validator_on: false, configurator_on: false };

    /// Turns off a stage by name: `harness`, `validator` or `configurator`.
    pub fn disable(&mut self, stage: &str) -> Result<()> {
        match stage {
            "harness" => self.harness_on = false,
            "validator" => self.validator_on = false,
            "configurator" => self.configurator_on = false,
            other => return Err(Error::InvalidConfig(format!("unknown stage {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunConfig {
    pub bugs: BugSet,
    pub silent_round: bool,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { bugs: BugSet::none(), silent_round: true, ablation: Ablation::ALL_ON }
    }
}

impl RunConfig {
    pub fn with_bugs(mut self, bugs: BugSet) -> Self {
        self.bugs = bugs;
        self
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }
}

/// Everything derived from an input before execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prepared {
    pub profile: CapabilityProfile,
    pub program: HarnessProgram,
    pub seed_state: VmState,
    pub directive: MutationDirective,
    /// The state placed in the VMCS region.
    pub state: VmState,
}

pub fn prepare(input: &FuzzInput, config: &RunConfig) -> Prepared {
    let ab = config.ablation;
    let profile = if ab.configurator_on {
        generate_profile(input.part(Partition::VcpuConfig)).expect("partition is long enough")
    } else {
        CapabilityProfile::default_static()
    };
    let program = if ab.harness_on {
        HarnessProgram::from_bytes(input.part(Partition::InitSequence), input.part(Partition::RuntimeSteps))
            .expect("partitions are long enough")
    } else {
        HarnessProgram::base()
    };
    let seed_state = VmState::from_prefix(input.part(Partition::VmcsSeed));
    let directive = parse_directive(input.part(Partition::MutationDirectives)).expect("partition is long enough");
    let base = if ab.validator_on { round(&seed_state, &profile) } else { seed_state.clone() };
    let state = mutate(&base, &directive);
    Prepared { profile, program, seed_state, directive, state }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub kind: AnomalyKind,
    pub bug: Option<BugId>,
    /// `BUG:<id>:<message>`.
    pub diagnostic: String,
    pub path_hash: u64,
    /// Execution index within the campaign; doubles as the file timestamp.
    pub exec_index: u64,
    pub config: RunConfig,
    /// Last trace lines before the anomaly.
    pub trace_excerpt: Vec<String>,
    #[serde(skip)]
    pub input: Option<FuzzInput>,
}

impl AnomalyRecord {
    pub fn dedup_key(&self) -> (Option<BugId>, u64) {
        (self.bug, self.path_hash)
    }

    pub fn file_stem(&self) -> String {
        let bug = self.bug.map_or("unknown", BugId::short);
        format!("{:012}-{bug}", self.exec_index)
    }

    /// Writes `<stem>.bin` (the exact input bytes) and `<stem>.json` into
    /// `dir` and returns the `.bin` path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let input = self.input.as_ref().ok_or_else(|| Error::MalformedInput("record has no input".into()))?;
        let bin = dir.join(format!("{}.bin", self.file_stem()));
        std::fs::write(&bin, input.as_bytes())?;
        std::fs::write(bin.with_extension("json"), serde_json::to_vec_pretty(self)?)?;
        Ok(bin)
    }

    /// Loads a record from its `.bin` or `.json` path.
    pub fn load(path: &Path) -> Result<Self> {
        let bin = path.with_extension("bin");
        let json = path.with_extension("json");
        for p in [&bin, &json] {
            if !p.exists() {
                return Err(Error::MissingRecord(p.clone()));
            }
        }
        let corrupt = |reason: String| Error::CorruptRecord { path: path.to_path_buf(), reason };
        let mut rec: AnomalyRecord =
            serde_json::from_slice(&std::fs::read(&json)?).map_err(|e| corrupt(e.to_string()))?;
        let input = FuzzInput::from_bytes(&std::fs::read(&bin)?).map_err(|e| corrupt(e.to_string()))?;
        rec.input = Some(input);
        Ok(rec)
    }
}

/// Result of one execution.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: ExecutionTrace,
    pub coverage: CoverageMap,
    pub anomaly: Option<AnomalyRecord>,
}

/// Reusable per-worker execution context with a private oracle.
pub struct Executor {
    oracle: Oracle,
    config: RunConfig,
}

impl Executor {
    pub fn new(config: RunConfig) -> Self {
        let oc = OracleConfig::new(CapabilityProfile::default_static())
            .with_bugs(config.bugs)
            .with_silent_round(config.silent_round);
        Self { oracle: Oracle::new(oc), config }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    /// Watchdog restarts so far.
    pub fn restarts(&self) -> u64 {
        self.oracle.restarts()
    }

    fn run_inner(&mut self, input: &FuzzInput, record: bool) -> ExecutionTrace {
        let prep = prepare(input, &self.config);
        // A crashed oracle is rebuilt here; reset also counts the restart.
        self.oracle.reset();
        if record {
            execute(&prep.program, &prep.state, &prep.profile, &mut self.oracle)
        } else {
            execute_quiet(&prep.program, &prep.state, &prep.profile, &mut self.oracle)
        }
    }

    /// Runs `input` and returns the edges it hit plus any anomaly. The oracle
    /// keeps this run's coverage until the next call.
    pub fn run_fast(&mut self, input: &FuzzInput, exec_index: u64) -> (&CoverageMap, Option<AnomalyRecord>) {
        let trace = self.run_inner(input, false);
        let anomaly = anomaly_from(&trace, input, &self.config, exec_index);
        (self.oracle.coverage(), anomaly)
    }

    pub fn run(&mut self, input: &FuzzInput, exec_index: u64) -> RunOutcome {
        let trace = self.run_inner(input, true);
        let anomaly = anomaly_from(&trace, input, &self.config, exec_index);
        RunOutcome { coverage: self.oracle.coverage_snapshot(), trace, anomaly }
    }
}

fn anomaly_from(trace: &ExecutionTrace, input: &FuzzInput, config: &RunConfig, exec_index: u64) -> Option<AnomalyRecord> {
    let TerminalStatus::Crashed { bug, diagnostic } = &trace.status else { return None };
    let excerpt = trace.entries.iter().rev().take(8).rev().map(|e| format!("{} -> {:?}", e.op, e.response)).collect();
    Some(AnomalyRecord {
        kind: AnomalyKind::classify(diagnostic),
        bug: Some(*bug),
        diagnostic: diagnostic_line(*bug, diagnostic),
        path_hash: trace.path_hash,
        exec_index,
        config: *config,
        trace_excerpt: excerpt,
        input: Some(input.clone()),
    })
}

/// Runs one input on a fresh oracle.
pub fn run_one(input: &[u8], config: &RunConfig) -> Result<RunOutcome> {
    let input = FuzzInput::from_bytes(input)?;
    Ok(Executor::new(*config).run(&input, 0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub reproduced: bool,
    pub expected: Option<BugId>,
    pub observed: Option<BugId>,
    pub diagnostic: Option<String>,
}

/// Replays a stored record, under its own config or `bugs` if given.
pub fn reproduce(path: &Path, bugs: Option<BugSet>) -> Result<Verdict> {
    let rec = AnomalyRecord::load(path)?;
    let mut config = rec.config;
    if let Some(b) = bugs {
        config.bugs = b;
    }
    let input = rec.input.as_ref().expect("load sets the input");
    let out = Executor::new(config).run(input, rec.exec_index);
    let observed = out.anomaly.as_ref().and_then(|a| a.bug);
    Ok(Verdict {
        reproduced: observed.is_some() && observed == rec.bug,
        expected: rec.bug,
        observed,
        diagnostic: out.anomaly.map(|a| a.diagnostic),
    })
}
