// SPDX-License-Identifier: Apache-2.0

//! Two-phase harness programs: a mutated VMX initialization template followed
//! by a loop of L2 exit triggers and L1 responses.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::capability::CapabilityProfile;
use crate::error::{ensure_len, Result};
use crate::oracle::{BugId, OpResponse, Oracle, RejectReason, SequenceError, VMCS12_REGION, VMXON_REGION};
use crate::state::{field, FieldId, VmState, FIELD_COUNT};

pub const INIT_SLICE_BYTES: usize = 32;
pub const STEP_BYTES: usize = 8;
pub const DEFAULT_ITERATION_CAP: usize = 256;
pub const MAX_SWAPS: usize = 3;
pub const MAX_REPEAT: usize = 4;

/// Fields written by the template, in order.
pub const TEMPLATE_WRITES: [FieldId; 12] = [
    field::PIN_CONTROLS,
    field::PROC_CONTROLS,
    field::PROC2_CONTROLS,
    field::EXIT_CONTROLS,
    field::ENTRY_CONTROLS,
    field::EPT_POINTER,
    field::HOST_CR4,
    field::HOST_RIP,
    field::GUEST_CR0,
    field::GUEST_CR4,
    field::GUEST_EFER,
    field::GUEST_ACTIVITY_STATE,
];

pub const TEMPLATE_LEN: usize = TEMPLATE_WRITES.len() + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerKind {
    ControlRegisterAccess,
    DebugRegisterAccess,
    IoPort,
    MsrRead,
    MsrWrite,
    CpuId,
    Halt,
    ReadTsc,
    Pause,
    RdRand,
    VmxInstruction,
}

impl TriggerKind {
    pub const ALL: [TriggerKind; 11] = [
        Self::ControlRegisterAccess,
        Self::DebugRegisterAccess,
        Self::IoPort,
        Self::MsrRead,
        Self::MsrWrite,
        Self::CpuId,
        Self::Halt,
        Self::ReadTsc,
        Self::Pause,
        Self::RdRand,
        Self::VmxInstruction,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Context {
    L1,
    L2,
}

/// Where a VMWRITE gets its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueSource {
    /// The field's value in the input state.
    FromState,
    /// The input state's value with one bit flipped.
    XorBit(u32),
    Immediate(u64),
    /// The input state's value of a different field.
    OtherField(FieldId),
}

impl ValueSource {
    fn resolve(self, state: &VmState, target: FieldId) -> u64 {
        match self {
            Self::FromState => state.get(target),
            Self::XorBit(b) => state.get(target) ^ (1u64 << (b % target.width())),
            Self::Immediate(v) => v,
            Self::OtherField(f) => state.get(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    VmxOn(u64),
    VmClear(u64),
    VmPtrLd(u64),
    VmWrite(FieldId, ValueSource),
    VmLaunch,
    VmResume,
    VmRead(FieldId),
    ExitTrigger { kind: TriggerKind, index: u8, operand: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HarnessOp {
    pub opcode: Opcode,
    pub context: Context,
}

impl HarnessOp {
    pub fn l1(opcode: Opcode) -> Self {
        Self { opcode, context: Context::L1 }
    }
}

impl fmt::Display for HarnessOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.opcode {
            Opcode::VmxOn(a) => write!(f, "vmxon {a:#x}"),
            Opcode::VmClear(a) => write!(f, "vmclear {a:#x}"),
            Opcode::VmPtrLd(a) => write!(f, "vmptrld {a:#x}"),
            Opcode::VmWrite(fid, src) => write!(f, "vmwrite {fid} {src:?}"),
            Opcode::VmLaunch => f.write_str("vmlaunch"),
            Opcode::VmResume => f.write_str("vmresume"),
            Opcode::VmRead(fid) => write!(f, "vmread {fid}"),
            Opcode::ExitTrigger { kind, index, operand } => write!(f, "[L2] {kind:?} #{index} {operand:#x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuntimeStep {
    pub trigger: HarnessOp,
    pub response: HarnessOp,
    /// Issue VMRESUME after the response.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessProgram {
    pub init_ops: Vec<HarnessOp>,
    pub runtime_steps: Vec<RuntimeStep>,
    pub iteration_cap: usize,
}

pub fn base_template() -> Vec<HarnessOp> {
    let mut ops = vec![
        HarnessOp::l1(Opcode::VmxOn(VMXON_REGION)),
        HarnessOp::l1(Opcode::VmClear(VMCS12_REGION)),
        HarnessOp::l1(Opcode::VmPtrLd(VMCS12_REGION)),
    ];
    ops.extend(TEMPLATE_WRITES.iter().map(|&f| HarnessOp::l1(Opcode::VmWrite(f, ValueSource::FromState))));
    ops.push(HarnessOp::l1(Opcode::VmLaunch));
    ops
}

fn perturb(op: Opcode, b: u8, imm: &mut impl FnMut() -> u8) -> Opcode {
    let addr = |a: u64| match b & 3 {
        0 => a | 0x10,
        1 => VMXON_REGION,
        2 => a | 1 << 52,
        _ => 0x3000,
    };
    match op {
        Opcode::VmxOn(a) => Opcode::VmxOn(addr(a)),
        Opcode::VmClear(a) => Opcode::VmClear(addr(a)),
        Opcode::VmPtrLd(a) => Opcode::VmPtrLd(addr(a)),
        Opcode::VmWrite(f, _) => {
            let src = match b & 3 {
                0 | 1 => ValueSource::XorBit(imm() as u32 % f.width()),
                2 => ValueSource::OtherField(FieldId(u16::from_le_bytes([imm(), imm()]) % FIELD_COUNT as u16)),
                _ => ValueSource::Immediate(u64::from_le_bytes(std::array::from_fn(|_| imm()))),
            };
            Opcode::VmWrite(f, src)
        }
        Opcode::VmLaunch => Opcode::VmResume,
        other => other,
    }
}

/// Layout: bytes 0..3 adjacent swaps (active at 0xF0 and above), 3..7 two-bit
/// repetition counts, 7..23 argument perturbations (active at 0xF0 and above),
/// the rest immediates.
pub fn build_init_sequence(input: &[u8]) -> Result<Vec<HarnessOp>> {
    ensure_len("init sequence", input, INIT_SLICE_BYTES)?;
    let mut ops = base_template();
    for &b in &input[..MAX_SWAPS] {
        if b >= 0xF0 {
            let i = (b & 0x0F) as usize % (TEMPLATE_LEN - 1);
            ops.swap(i, i + 1);
        }
    }
    let imm_bytes = &input[23..];
    let mut pos = 0;
    let mut imm = || {
        let v = imm_bytes[pos % imm_bytes.len()];
        pos += 1;
        v
    };
    for (i, op) in ops.iter_mut().enumerate() {
        let b = input[7 + i];
        if b >= 0xF0 {
            op.opcode = perturb(op.opcode, b, &mut imm);
        }
    }
    let mut out = Vec::with_capacity(TEMPLATE_LEN * 2);
    for (i, op) in ops.into_iter().enumerate() {
        let reps = 1 + (input[3 + i / 4] >> (2 * (i % 4)) & 3) as usize;
        out.extend(std::iter::repeat_n(op, reps));
    }
    Ok(out)
}

/// Layout: kind, index plus operand shift, L1 op selector, field selector,
/// 32-bit operand.
pub fn build_runtime_step(input: &[u8]) -> Result<RuntimeStep> {
    ensure_len("runtime step", input, STEP_BYTES)?;
    let kind = TriggerKind::ALL[input[0] as usize % TriggerKind::ALL.len()];
    let index = input[1] & 0x1F;
    let shift = (input[1] >> 5) as u32 * 8;
    let raw = u32::from_le_bytes([input[4], input[5], input[6], input[7]]);
    let operand = (raw as u64) << shift;
    // The low half of the selector byte targets fields the template wrote.
    let fid = if input[3] < 0x80 {
        TEMPLATE_WRITES[input[3] as usize % TEMPLATE_WRITES.len()]
    } else {
        FieldId(input[3] as u16 % FIELD_COUNT as u16)
    };
    let response = match input[2] & 3 {
        0 => Opcode::VmRead(fid),
        1 => {
            let src = if input[2] & 0x80 != 0 { ValueSource::Immediate(operand) } else { ValueSource::XorBit(input[4] as u32) };
            Opcode::VmWrite(fid, src)
        }
        2 => Opcode::VmResume,
        _ => Opcode::VmClear(VMCS12_REGION),
    };
    Ok(RuntimeStep {
        trigger: HarnessOp { opcode: Opcode::ExitTrigger { kind, index, operand }, context: Context::L2 },
        response: HarnessOp::l1(response),
        resume: response != Opcode::VmResume,
    })
}

/// One step per full eight-byte chunk, at most `cap` steps.
pub fn build_runtime_steps(input: &[u8], cap: usize) -> Vec<RuntimeStep> {
    input.chunks_exact(STEP_BYTES).take(cap).map(|c| build_runtime_step(c).expect("chunk is full length")).collect()
}

impl HarnessProgram {
    pub fn from_bytes(init: &[u8], runtime: &[u8]) -> Result<Self> {
        Ok(Self {
            init_ops: build_init_sequence(init)?,
            runtime_steps: build_runtime_steps(runtime, DEFAULT_ITERATION_CAP),
            iteration_cap: DEFAULT_ITERATION_CAP,
        })
    }

    /// The unmodified template with a single CPUID round trip.
    pub fn base() -> Self {
        let step = RuntimeStep {
            trigger: HarnessOp {
                opcode: Opcode::ExitTrigger { kind: TriggerKind::CpuId, index: 0, operand: 0 },
                context: Context::L2,
            },
            response: HarnessOp::l1(Opcode::VmRead(FieldId(0))),
            resume: true,
        };
        Self { init_ops: base_template(), runtime_steps: vec![step], iteration_cap: DEFAULT_ITERATION_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub op: HarnessOp,
    pub response: OpResponse,
    pub new_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    Completed,
    Rejected(RejectReason),
    Crashed { bug: BugId, diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub entries: Vec<TraceEntry>,
    pub status: TerminalStatus,
    /// Whether init reached the guest.
    pub launched: bool,
    pub runtime_steps_run: usize,
    pub path_hash: u64,
}

impl ExecutionTrace {
    pub fn crash(&self) -> Option<(BugId, &str)> {
        match &self.status {
            TerminalStatus::Crashed { bug, diagnostic } => Some((*bug, diagnostic)),
            _ => None,
        }
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &serde_json::json!({ "status": self.status, "path_hash": self.path_hash }))?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

struct Runner<'a> {
    oracle: &'a mut Oracle,
    state: &'a VmState,
    entries: Vec<TraceEntry>,
    record: bool,
}

impl Runner<'_> {
    fn issue(&mut self, op: HarnessOp) -> OpResponse {
        let before = self.oracle.coverage().distinct();
        let resp = match op.opcode {
            Opcode::VmxOn(a) => self.oracle.vmxon(a),
            Opcode::VmClear(a) => self.oracle.vmclear(a),
            Opcode::VmPtrLd(a) => self.oracle.vmptrld(a),
            Opcode::VmWrite(f, src) => self.oracle.vmwrite(f, src.resolve(self.state, f)),
            Opcode::VmLaunch => self.oracle.vmlaunch(),
            Opcode::VmResume => self.oracle.vmresume(),
            Opcode::VmRead(f) => self.oracle.vmread(f),
            Opcode::ExitTrigger { kind, index, operand } => self.oracle.l2_exit(kind, index, operand),
        };
        if self.record {
            let new_edges = self.oracle.coverage().distinct() - before;
            self.entries.push(TraceEntry { op, response: resp.clone(), new_edges });
        }
        resp
    }
}

fn terminal(resp: &OpResponse) -> Option<TerminalStatus> {
    match resp {
        OpResponse::Crashed { bug, diagnostic } => {
            Some(TerminalStatus::Crashed { bug: *bug, diagnostic: diagnostic.clone() })
        }
        OpResponse::EntryRejected(r) => Some(TerminalStatus::Rejected(*r)),
        OpResponse::VmFail(e) => Some(TerminalStatus::Rejected(RejectReason::Sequence(*e))),
        _ => None,
    }
}

/// Runs `program` on `oracle` with `state` in the VMCS region. The oracle
/// keeps whatever coverage it had; callers reset it between inputs.
pub fn execute(program: &HarnessProgram, state: &VmState, profile: &CapabilityProfile, oracle: &mut Oracle) -> ExecutionTrace {
    run(program, state, profile, oracle, true)
}

/// As [`execute`] without per-op trace entries.
pub fn execute_quiet(program: &HarnessProgram, state: &VmState, profile: &CapabilityProfile, oracle: &mut Oracle) -> ExecutionTrace {
    run(program, state, profile, oracle, false)
}

fn run(program: &HarnessProgram, state: &VmState, profile: &CapabilityProfile, oracle: &mut Oracle, record: bool) -> ExecutionTrace {
    if oracle.config().profile != *profile {
        oracle.apply_profile(profile);
    }
    oracle.load_vmcs12(state);
    let mut r = Runner { oracle, state, entries: Vec::new(), record };
    let mut last_failure = RejectReason::Sequence(SequenceError::VmcsNotLaunched);
    let mut status = None;
    for &op in &program.init_ops {
        let resp = r.issue(op);
        if let OpResponse::Crashed { .. } = resp {
            status = terminal(&resp);
            break;
        }
        if let Some(TerminalStatus::Rejected(reason)) = terminal(&resp) {
            last_failure = reason;
        }
        if resp == OpResponse::Entered {
            break;
        }
    }
    let launched = r.oracle.in_guest();
    if status.is_none() && !launched {
        status = Some(TerminalStatus::Rejected(last_failure));
    }

    let mut steps = 0;
    if status.is_none() {
        for step in program.runtime_steps.iter().take(program.iteration_cap) {
            steps += 1;
            let resp = r.issue(step.trigger);
            if let Some(t) = terminal(&resp) {
                status = Some(t);
                break;
            }
            if resp != (OpResponse::Exit { reflected: true }) {
                continue;
            }
            let resp = r.issue(step.response);
            if let Some(t) = terminal(&resp) {
                status = Some(t);
                break;
            }
            if step.resume {
                let resp = r.issue(HarnessOp::l1(Opcode::VmResume));
                if let Some(t) = terminal(&resp) {
                    status = Some(t);
                    break;
                }
            }
        }
    }
    let path_hash = r.oracle.path_hash();
    ExecutionTrace {
        entries: r.entries,
        status: status.unwrap_or(TerminalStatus::Completed),
        launched,
        runtime_steps_run: steps,
        path_hash,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_slice_is_template() {
        assert_eq!(build_init_sequence(&[0; 32]).unwrap(), base_template());
        assert_eq!(base_template().len(), TEMPLATE_LEN);
        assert!(build_init_sequence(&[0; 31]).is_err());
    }

    #[test]
    fn swap_encoding() {
        let mut b = [0u8; 32];
        b[0] = 0xF1;
        let ops = build_init_sequence(&b).unwrap();
        assert_eq!(ops[1].opcode, Opcode::VmPtrLd(VMCS12_REGION));
        assert_eq!(ops[2].opcode, Opcode::VmClear(VMCS12_REGION));
    }

    #[test]
    fn zero_step() {
        let s = build_runtime_step(&[0; 8]).unwrap();
        assert_eq!(
            s.trigger.opcode,
            Opcode::ExitTrigger { kind: TriggerKind::ControlRegisterAccess, index: 0, operand: 0 }
        );
        assert_eq!(s.response.opcode, Opcode::VmRead(FieldId(0)));
        assert!(build_runtime_step(&[0; 7]).is_err());
    }

    #[test]
    fn non_canonical_msr_write() {
        let s = build_runtime_step(&[4, 0xE0 | 10, 0, 0, 0x80, 0, 0, 0]).unwrap();
        assert_eq!(
            s.trigger.opcode,
            Opcode::ExitTrigger { kind: TriggerKind::MsrWrite, index: 10, operand: 0x8000_0000_0000_0000 }
        );
    }
}
