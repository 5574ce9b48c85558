// SPDX-License-Identifier: Apache-2.0

//! Validity-aware fuzzing of nested VM entry.

pub mod capability;
pub mod checks;
pub mod coverage;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mutator;
pub mod oracle;
pub mod state;
pub mod validator;

pub use capability::{generate_profile, CapReg, CapabilityProfile, FeatureId};
pub use checks::{enabled_checks, CheckId};
pub use error::{Error, Result};
pub use state::{catalog, field, FieldCatalog, FieldGroup, FieldId, FieldSpec, StateBlob, VmState};
pub use validator::{round, round_controls, round_guest_state, round_host_state, round_traced, validate, ValidationReport, Violation};
pub use mutator::{mutate, parse_directive, FieldWeights, MutationDirective};
pub use coverage::CoverageMap;
pub use harness::{build_init_sequence, build_runtime_step, execute, ExecutionTrace, HarnessOp, HarnessProgram, Opcode, TerminalStatus, TriggerKind};
pub use oracle::{BugId, BugSet, EntryResult, EntryStatus, OpResponse, Oracle, OracleConfig, RejectReason};
pub use engine::{prepare, reproduce, run_campaign, run_one, Ablation, AnomalyRecord, CampaignConfig, CampaignStats, Executor, FuzzInput, Partition, RunConfig, RunOutcome};
