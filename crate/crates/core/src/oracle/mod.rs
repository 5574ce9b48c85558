// SPDX-License-Identifier: Apache-2.0

//! Desk-scale stand-in for the L0 hypervisor: nested VM-entry checking,
//! VMCS12 to VMCS02 translation, silent rounding, exit routing, coverage, and
//! six seeded bugs.

mod entry;
mod exits;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::capability::CapabilityProfile;
use crate::checks::CheckId;
use crate::coverage::CoverageMap;
use crate::error::{Error, Result};
use crate::harness::TriggerKind;
use crate::state::{FieldId, VmState};

pub const VMXON_REGION: u64 = 0x1000;
pub const VMCS12_REGION: u64 = 0x2000;

macro_rules! cov {
    ($o:expr, $site:literal, $branch:expr) => {
        $o.cov.hit($crate::coverage::edge_id(const { $crate::coverage::site_id($site) }, ($branch) as u32))
    };
}
pub(crate) use cov;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum BugId {
    B1_MissingIa32ePaeCheck,
    B2_NonCanonicalMsrLoad,
    B3_InvalidEptpTripleFault,
    B4_ActivityStateBlindCopy,
    B5_LmePgInconsistency,
    B6_VgifAssumption,
}

impl BugId {
    pub const ALL: [BugId; 6] = [
        Self::B1_MissingIa32ePaeCheck,
        Self::B2_NonCanonicalMsrLoad,
        Self::B3_InvalidEptpTripleFault,
        Self::B4_ActivityStateBlindCopy,
        Self::B5_LmePgInconsistency,
        Self::B6_VgifAssumption,
    ];

    pub fn short(self) -> &'static str {
        ["B1", "B2", "B3", "B4", "B5", "B6"][self as usize]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::B1_MissingIa32ePaeCheck => "B1_MissingIa32ePaeCheck",
            Self::B2_NonCanonicalMsrLoad => "B2_NonCanonicalMsrLoad",
            Self::B3_InvalidEptpTripleFault => "B3_InvalidEptpTripleFault",
            Self::B4_ActivityStateBlindCopy => "B4_ActivityStateBlindCopy",
            Self::B5_LmePgInconsistency => "B5_LmePgInconsistency",
            Self::B6_VgifAssumption => "B6_VgifAssumption",
        }
    }
}

impl fmt::Display for BugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for BugId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BugId::ALL
            .into_iter()
            .find(|b| b.short().eq_ignore_ascii_case(s) || b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown bug id {s:?}")))
    }
}

/// How an anomaly surfaces in the target's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    /// The host dies or hangs.
    Crash,
    /// A sanitizer report, assertion or warning line.
    DiagnosticPattern,
}

impl AnomalyKind {
    pub fn classify(diagnostic: &str) -> AnomalyKind {
        if ["UBSAN", "Assertion", "WARNING"].iter().any(|p| diagnostic.contains(p)) {
            AnomalyKind::DiagnosticPattern
        } else {
            AnomalyKind::Crash
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BugInfo {
    pub id: BugId,
    pub trigger: &'static str,
    pub check: CheckId,
    pub kind: AnomalyKind,
}

pub fn seeded_bug_catalog() -> Vec<BugInfo> {
    use AnomalyKind::*;
    use BugId::*;
    vec![
        BugInfo {
            id: B1_MissingIa32ePaeCheck,
            trigger: "IA-32e entry with guest CR4.PAE clear while shadow paging is in use",
            check: CheckId::GUEST_IA32E_REQUIRES_PAE,
            kind: DiagnosticPattern,
        },
        BugInfo {
            id: B2_NonCanonicalMsrLoad,
            trigger: "MSR-load slot or guest WRMSR writing a non-canonical address to an address MSR",
            check: CheckId::MSRLOAD_CANONICAL,
            kind: Crash,
        },
        BugInfo {
            id: B3_InvalidEptpTripleFault,
            trigger: "EPT enabled with an invalid EPT pointer",
            check: CheckId::EPTP_VALID,
            kind: DiagnosticPattern,
        },
        BugInfo {
            id: B4_ActivityStateBlindCopy,
            trigger: "accepted entry with activity state 3 (wait-for-SIPI)",
            check: CheckId::GUEST_ACTIVITY_STATE,
            kind: Crash,
        },
        BugInfo {
            id: B5_LmePgInconsistency,
            trigger: "resume after an IA-32e entry with EFER.LME set and CR0.PG clear",
            check: CheckId::GUEST_EFER_LMA,
            kind: DiagnosticPattern,
        },
        BugInfo {
            id: B6_VgifAssumption,
            trigger: "rejected entry with virtual GIF enabled and the GIF bit clear",
            check: CheckId::GUEST_VGIF_STATE,
            kind: DiagnosticPattern,
        },
    ]
}

/// Subset of the bug catalog.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BugSet(u8);

impl BugSet {
    pub const fn none() -> Self {
        Self(0)
    }

    pub const fn all() -> Self {
        Self(0x3F)
    }

    pub fn with(self, bug: BugId) -> Self {
        Self(self.0 | 1 << bug as u8)
    }

    pub fn contains(self, bug: BugId) -> bool {
        self.0 & 1 << bug as u8 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = BugId> {
        BugId::ALL.into_iter().filter(move |b| self.contains(*b))
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl FromIterator<BugId> for BugSet {
    fn from_iter<I: IntoIterator<Item = BugId>>(iter: I) -> Self {
        iter.into_iter().fold(BugSet::none(), BugSet::with)
    }
}

impl fmt::Display for BugSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(BugId::short).collect();
        f.write_str(if names.is_empty() { "none" } else { "" })?;
        f.write_str(&names.join(","))
    }
}

impl FromStr for BugSet {
    type Err = Error;

    /// `all`, `none`, or a comma-separated list of ids.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Self::all()),
            "none" | "" => Ok(Self::none()),
            list => list.split(',').map(|p| p.trim().parse::<BugId>()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub profile: CapabilityProfile,
    pub seeded_bugs: BugSet,
    pub silent_round: bool,
}

impl OracleConfig {
    pub fn new(profile: CapabilityProfile) -> Self {
        Self { profile, seeded_bugs: BugSet::none(), silent_round: true }
    }

    pub fn with_bugs(mut self, bugs: BugSet) -> Self {
        self.seeded_bugs = bugs;
        self
    }

    pub fn with_silent_round(mut self, on: bool) -> Self {
        self.silent_round = on;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequenceError {
    VmxOff,
    VmxAlreadyOn,
    Misaligned,
    BeyondPhysWidth,
    VmxonPointer,
    BadRevision,
    NoCurrentVmcs,
    VmcsNotLaunched,
    VmcsAlreadyLaunched,
    NotInGuest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    Check(CheckId),
    Sequence(SequenceError),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Check(c) => write!(f, "{c}"),
            Self::Sequence(e) => write!(f, "SEQUENCE_ERROR({e:?})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryStatus {
    Accepted(Box<VmState>),
    Rejected(RejectReason),
    Crashed { bug: BugId, diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryResult {
    pub status: EntryStatus,
    /// Fields the model CPU corrected instead of rejecting, with their new values.
    pub silently_rounded: Vec<(FieldId, u64)>,
}

impl EntryResult {
    pub fn is_rejected(&self) -> bool {
        matches!(self.status, EntryStatus::Rejected(_))
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self.status, EntryStatus::Accepted(_))
    }
}

/// Oracle response to one harness operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpResponse {
    Ok,
    Read(u64),
    VmFail(SequenceError),
    Entered,
    EntryRejected(RejectReason),
    Exit { reflected: bool },
    Crashed { bug: BugId, diagnostic: String },
}

impl OpResponse {
    pub fn is_crash(&self) -> bool {
        matches!(self, Self::Crashed { .. })
    }
}

/// One diagnostic line as the target would print it.
pub fn diagnostic_line(bug: BugId, message: &str) -> String {
    format!("BUG:{}:{message}", bug.short())
}

pub(crate) enum Fail {
    Reject(CheckId),
    Crash(BugId, String),
}

pub struct Oracle {
    config: OracleConfig,
    pub(crate) cov: CoverageMap,
    path_hash: u64,
    vmx_on: bool,
    current: Option<u64>,
    launched: bool,
    vmcs12: VmState,
    in_l2: bool,
    dirty: bool,
    l2_long_mode: bool,
    crashed: Option<(BugId, String)>,
    restarts: u64,
}

impl Oracle {
    pub fn new(config: OracleConfig) -> Self {
        Self {
            config,
            cov: CoverageMap::new(),
            path_hash: 0,
            vmx_on: false,
            current: None,
            launched: false,
            vmcs12: VmState::zeroed(),
            in_l2: false,
            dirty: false,
            l2_long_mode: false,
            crashed: None,
            restarts: 0,
        }
    }

    /// An oracle that has already executed VMXON, VMCLEAR and VMPTRLD, with
    /// `vmcs12` in the VMCS region.
    pub fn ready(config: OracleConfig, vmcs12: &VmState) -> Self {
        let mut o = Self::new(config);
        o.load_vmcs12(vmcs12);
        o.vmxon(VMXON_REGION);
        o.vmclear(VMCS12_REGION);
        o.vmptrld(VMCS12_REGION);
        o
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn apply_profile(&mut self, profile: &CapabilityProfile) {
        self.config.profile = profile.clone();
    }

    pub fn set_bugs(&mut self, bugs: BugSet) {
        self.config.seeded_bugs = bugs;
    }

    /// Returns the VM to power-on state with fresh coverage. Used between runs
    /// and as the watchdog restart after a crash.
    pub fn reset(&mut self) {
        if self.crashed.is_some() {
            self.restarts += 1;
        }
        self.cov.reset();
        self.path_hash = 0;
        self.vmx_on = false;
        self.current = None;
        self.launched = false;
        self.in_l2 = false;
        self.dirty = false;
        self.l2_long_mode = false;
        self.crashed = None;
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    /// Places `state` in guest memory at the VMCS12 region.
    pub fn load_vmcs12(&mut self, state: &VmState) {
        self.vmcs12 = state.clone();
    }

    pub fn vmcs12(&self) -> &VmState {
        &self.vmcs12
    }

    pub fn coverage(&self) -> &CoverageMap {
        &self.cov
    }

    pub fn coverage_snapshot(&self) -> CoverageMap {
        self.cov.clone()
    }

    pub fn reset_coverage(&mut self) {
        self.cov.reset();
    }

    /// Hash of the ordered check sites visited by the most recent entry.
    pub fn path_hash(&self) -> u64 {
        self.path_hash
    }

    pub fn crashed(&self) -> Option<&(BugId, String)> {
        self.crashed.as_ref()
    }

    pub fn in_guest(&self) -> bool {
        self.in_l2
    }

    pub(crate) fn bug(&self, b: BugId) -> bool {
        self.config.seeded_bugs.contains(b)
    }

    fn crash(&mut self, bug: BugId, diagnostic: String) -> OpResponse {
        cov!(self, "crash", bug as u32);
        self.crashed = Some((bug, diagnostic.clone()));
        OpResponse::Crashed { bug, diagnostic }
    }

    fn dead(&self) -> Option<OpResponse> {
        self.crashed.as_ref().map(|(bug, d)| OpResponse::Crashed { bug: *bug, diagnostic: d.clone() })
    }

    fn check_pointer(&mut self, addr: u64) -> std::result::Result<(), SequenceError> {
        if !self.vmx_on {
            return Err(SequenceError::VmxOff);
        }
        if addr & 0xFFF != 0 {
            return Err(SequenceError::Misaligned);
        }
        if addr & !self.config.profile.phys_mask() != 0 {
            return Err(SequenceError::BeyondPhysWidth);
        }
        Ok(())
    }

    fn fail(&mut self, op: u32, e: SequenceError) -> OpResponse {
        cov!(self, "vmfail", op << 8 | e as u32);
        OpResponse::VmFail(e)
    }

    pub fn vmxon(&mut self, addr: u64) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if self.vmx_on {
            return self.fail(0, SequenceError::VmxAlreadyOn);
        }
        self.vmx_on = true;
        let checked = self.check_pointer(addr).and({
            if addr == VMXON_REGION {
                Ok(())
            } else {
                Err(SequenceError::BadRevision)
            }
        });
        if let Err(e) = checked {
            self.vmx_on = false;
            return self.fail(0, e);
        }
        cov!(self, "vmxon", 1);
        OpResponse::Ok
    }

    pub fn vmclear(&mut self, addr: u64) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if let Err(e) = self.check_pointer(addr) {
            return self.fail(1, e);
        }
        if addr == VMXON_REGION {
            return self.fail(1, SequenceError::VmxonPointer);
        }
        if addr == VMCS12_REGION {
            cov!(self, "vmclear", self.launched as u32);
            self.launched = false;
        } else {
            cov!(self, "vmclear_other", 0);
        }
        if self.current == Some(addr) {
            cov!(self, "vmclear_current", 0);
            self.current = None;
        }
        OpResponse::Ok
    }

    pub fn vmptrld(&mut self, addr: u64) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if let Err(e) = self.check_pointer(addr) {
            return self.fail(2, e);
        }
        if addr == VMXON_REGION {
            return self.fail(2, SequenceError::VmxonPointer);
        }
        if addr != VMCS12_REGION {
            return self.fail(2, SequenceError::BadRevision);
        }
        cov!(self, "vmptrld", self.current.is_some() as u32);
        self.current = Some(addr);
        OpResponse::Ok
    }

    fn require_current(&mut self, op: u32) -> std::result::Result<(), OpResponse> {
        if !self.vmx_on {
            return Err(self.fail(op, SequenceError::VmxOff));
        }
        if self.current.is_none() {
            return Err(self.fail(op, SequenceError::NoCurrentVmcs));
        }
        Ok(())
    }

    pub fn vmwrite(&mut self, field: FieldId, value: u64) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if let Err(r) = self.require_current(3) {
            return r;
        }
        cov!(self, "vmwrite", (field.index() as u32) << 1 | self.launched as u32);
        self.vmcs12.set(field, value);
        self.dirty = true;
        OpResponse::Ok
    }

    pub fn vmread(&mut self, field: FieldId) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if let Err(r) = self.require_current(4) {
            return r;
        }
        cov!(self, "vmread", field.group() as u32);
        OpResponse::Read(self.vmcs12.get(field))
    }

    pub fn vmlaunch(&mut self) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if let Err(r) = self.require_current(5) {
            return r;
        }
        if self.launched {
            return self.fail(5, SequenceError::VmcsAlreadyLaunched);
        }
        self.enter(false)
    }

    pub fn vmresume(&mut self) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if let Err(r) = self.require_current(6) {
            return r;
        }
        if !self.launched {
            return self.fail(6, SequenceError::VmcsNotLaunched);
        }
        if self.bug(BugId::B5_LmePgInconsistency) && self.l2_long_mode {
            let efer = self.vmcs12.get(crate::state::field::GUEST_EFER);
            let cr0 = self.vmcs12.get(crate::state::field::GUEST_CR0);
            if efer & crate::checks::arch::EFER_LME != 0 && cr0 & crate::checks::arch::CR0_PG == 0 {
                let msg = format!("WARNING: AVIC_NOACCEL inhibit with EFER.LME=1 CR0.PG=0 (cr0 {cr0:#x})");
                return self.crash(BugId::B5_LmePgInconsistency, msg);
            }
        }
        if !self.dirty {
            cov!(self, "resume_fast", 0);
            self.in_l2 = true;
            return OpResponse::Entered;
        }
        self.enter(true)
    }

    fn enter(&mut self, resume: bool) -> OpResponse {
        let vmcs12 = self.vmcs12.clone();
        let result = self.vm_entry(&vmcs12);
        match result.status {
            EntryStatus::Accepted(_) => {
                cov!(self, "entered", resume as u32);
                self.launched = true;
                self.in_l2 = true;
                self.dirty = false;
                self.l2_long_mode = entry::ia32e(&vmcs12);
                OpResponse::Entered
            }
            EntryStatus::Rejected(r) => OpResponse::EntryRejected(r),
            EntryStatus::Crashed { bug, diagnostic } => OpResponse::Crashed { bug, diagnostic },
        }
    }

    /// Full nested entry of `vmcs12` under the current configuration. Requires
    /// VMXON and a current VMCS; does not consult or change the launch state.
    pub fn vm_entry(&mut self, vmcs12: &VmState) -> EntryResult {
        if let Some((bug, diagnostic)) = self.crashed.clone() {
            return EntryResult { status: EntryStatus::Crashed { bug, diagnostic }, silently_rounded: Vec::new() };
        }
        let pre = if !self.vmx_on {
            Some(SequenceError::VmxOff)
        } else if self.current.is_none() {
            Some(SequenceError::NoCurrentVmcs)
        } else {
            None
        };
        if let Some(e) = pre {
            cov!(self, "entry_sequence", e as u32);
            return EntryResult {
                status: EntryStatus::Rejected(RejectReason::Sequence(e)),
                silently_rounded: Vec::new(),
            };
        }
        let (status, silently_rounded) = self.nested_entry(vmcs12);
        if let EntryStatus::Crashed { bug, diagnostic } = &status {
            cov!(self, "crash", *bug as u32);
            self.crashed = Some((*bug, diagnostic.clone()));
        }
        EntryResult { status, silently_rounded }
    }

    /// Runs one L2 exit-triggering instruction.
    pub fn l2_exit(&mut self, kind: TriggerKind, index: u8, operand: u64) -> OpResponse {
        if let Some(r) = self.dead() {
            return r;
        }
        if !self.in_l2 {
            return self.fail(7, SequenceError::NotInGuest);
        }
        match self.route_exit(kind, index, operand) {
            Ok(reflected) => {
                if reflected {
                    self.in_l2 = false;
                }
                OpResponse::Exit { reflected }
            }
            Err((bug, msg)) => self.crash(bug, msg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_six_distinct_bugs() {
        let c = seeded_bug_catalog();
        assert_eq!(c.len(), 6);
        let ids: std::collections::HashSet<_> = c.iter().map(|b| b.id).collect();
        assert_eq!(ids.len(), 6);
        assert_eq!(c[1].check, CheckId::MSRLOAD_CANONICAL);
    }

    #[test]
    fn bug_set_parsing() {
        assert_eq!("all".parse::<BugSet>().unwrap(), BugSet::all());
        assert_eq!("none".parse::<BugSet>().unwrap(), BugSet::none());
        let s: BugSet = "B2, b4".parse().unwrap();
        assert!(s.contains(BugId::B2_NonCanonicalMsrLoad) && s.contains(BugId::B4_ActivityStateBlindCopy));
        assert_eq!(s.iter().count(), 2);
        assert_eq!(s.to_string(), "B2,B4");
        assert_eq!(BugSet::none().to_string(), "none");
        assert!("B9".parse::<BugSet>().is_err());
        assert_eq!("B6_VgifAssumption".parse::<BugId>().unwrap(), BugId::B6_VgifAssumption);
    }

    #[test]
    fn diagnostic_kinds() {
        assert_eq!(AnomalyKind::classify("UBSAN: array-index-out-of-bounds"), AnomalyKind::DiagnosticPattern);
        assert_eq!(AnomalyKind::classify("general protection fault"), AnomalyKind::Crash);
        assert_eq!(diagnostic_line(BugId::B3_InvalidEptpTripleFault, "x"), "BUG:B3:x");
    }

    #[test]
    fn sequence_rules() {
        let mut o = Oracle::new(OracleConfig::new(CapabilityProfile::default_static()));
        assert_eq!(o.vmptrld(VMCS12_REGION), OpResponse::VmFail(SequenceError::VmxOff));
        assert_eq!(o.vmxon(VMXON_REGION + 8), OpResponse::VmFail(SequenceError::Misaligned));
        assert_eq!(o.vmxon(VMXON_REGION), OpResponse::Ok);
        assert_eq!(o.vmxon(VMXON_REGION), OpResponse::VmFail(SequenceError::VmxAlreadyOn));
        assert_eq!(o.vmptrld(VMXON_REGION), OpResponse::VmFail(SequenceError::VmxonPointer));
        assert_eq!(o.vmptrld(1 << 45), OpResponse::VmFail(SequenceError::BeyondPhysWidth));
        assert_eq!(o.vmptrld(0x5000), OpResponse::VmFail(SequenceError::BadRevision));
        assert_eq!(o.vmwrite(FieldId(0), 1), OpResponse::VmFail(SequenceError::NoCurrentVmcs));
        assert_eq!(o.vmptrld(VMCS12_REGION), OpResponse::Ok);
        assert_eq!(o.vmresume(), OpResponse::VmFail(SequenceError::VmcsNotLaunched));
        assert_eq!(o.vmclear(VMCS12_REGION), OpResponse::Ok);
        assert_eq!(o.vmread(FieldId(0)), OpResponse::VmFail(SequenceError::NoCurrentVmcs));
    }
}
