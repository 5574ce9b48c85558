// SPDX-License-Identifier: Apache-2.0

//! VM state validation and rounding.
//!
//! Rounding runs once over the enabled checks in catalog order (controls, host
//! state, guest state). A check is corrected only when it is violated, and the
//! correction is the minimal bit edit that satisfies it. Ties prefer setting
//! must-be-1 bits, then clearing must-be-0 bits, then the smaller value.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::capability::{bits, CapReg, CapabilityProfile, FeatureId};
use crate::checks::{arch::*, CheckId, Segment, HOST_CANONICAL, HOST_SELECTORS, MSR_LOAD_INDEX, MSR_LOAD_VALUE};
use crate::state::{field as fld, field::*, FieldGroup, FieldId, VmState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub check: CheckId,
    pub fields: Vec<FieldId>,
    pub observed: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn contains(&self, check: CheckId) -> bool {
        self.violations.iter().any(|v| v.check == check)
    }

    pub fn checks(&self) -> impl Iterator<Item = CheckId> + '_ {
        self.violations.iter().map(|v| v.check)
    }
}

pub fn validate(state: &VmState, profile: &CapabilityProfile) -> ValidationReport {
    let violations = CheckId::ALL
        .iter()
        .filter(|c| c.enabled_for(profile) && !holds(**c, state, profile))
        .map(|&check| Violation { check, fields: check.fields().to_vec(), observed: summarize(check, state) })
        .collect();
    ValidationReport { violations }
}

/// Whether a single check passes, ignoring feature gating.
pub fn check_passes(check: CheckId, state: &VmState, profile: &CapabilityProfile) -> bool {
    holds(check, state, profile)
}

fn summarize(check: CheckId, s: &VmState) -> String {
    let fields = check.fields();
    let mut out = String::new();
    for &f in fields {
        let v = s.get(f);
        if fields.len() > 8 && v == 0 {
            continue;
        }
        if !out.is_empty() {
            out.push_str(", ");
        }
        let _ = write!(out, "{}={v:#x}", f.name());
    }
    out
}

fn round_group(state: &VmState, profile: &CapabilityProfile, want: impl Fn(FieldGroup) -> bool, fired: &mut Vec<CheckId>) -> VmState {
    let mut s = state.clone();
    for &c in CheckId::ALL {
        if want(c.group()) && c.enabled_for(profile) && !holds(c, &s, profile) {
            correct(c, &mut s, profile);
            fired.push(c);
        }
    }
    s
}

pub fn round_controls(state: &VmState, profile: &CapabilityProfile) -> VmState {
    round_group(state, profile, FieldGroup::is_control, &mut Vec::new())
}

pub fn round_host_state(state: &VmState, profile: &CapabilityProfile) -> VmState {
    round_group(state, profile, |g| g == FieldGroup::HostState, &mut Vec::new())
}

pub fn round_guest_state(state: &VmState, profile: &CapabilityProfile) -> VmState {
    round_group(state, profile, |g| g == FieldGroup::GuestState, &mut Vec::new())
}

pub fn round(state: &VmState, profile: &CapabilityProfile) -> VmState {
    round_traced(state, profile).0
}

/// Rounds and also returns the checks that were corrected, in order.
pub fn round_traced(state: &VmState, profile: &CapabilityProfile) -> (VmState, Vec<CheckId>) {
    let mut fired = Vec::new();
    let s = round_group(state, profile, FieldGroup::is_control, &mut fired);
    let s = round_group(&s, profile, |g| g == FieldGroup::HostState, &mut fired);
    let s = round_group(&s, profile, |g| g == FieldGroup::GuestState, &mut fired);
    (s, fired)
}

fn is_canonical(v: u64) -> bool {
    let top = v >> 47;
    top == 0 || top == 0x1_FFFF
}

/// Majority vote over bits 63:47 (17 bits, never a tie).
fn make_canonical(v: u64) -> u64 {
    if (v >> 47).count_ones() >= 9 {
        v | !0 << 47
    } else {
        v & ((1 << 47) - 1)
    }
}

fn fits32(v: u64) -> bool {
    v >> 32 == 0
}

/// Member of `set` at minimal bit distance from `v`; ties go to the smaller value.
fn nearest(v: u64, set: &[u64]) -> u64 {
    *set.iter().min_by_key(|&&c| ((v ^ c).count_ones(), c)).expect("non-empty set")
}

fn aligned_below(v: u64, align: u64, profile: &CapabilityProfile) -> bool {
    v & (align - 1) == 0 && v & !profile.phys_mask() == 0
}

fn align_below(v: u64, align: u64, profile: &CapabilityProfile) -> u64 {
    v & !(align - 1) & profile.phys_mask()
}

fn masked(v: u64, m: crate::capability::CapMasks) -> u64 {
    (v | m.allowed0 as u64) & m.allowed1 as u64
}

fn has(s: &VmState, f: FieldId, bit: u32) -> bool {
    s.get(f) & bit as u64 != 0
}

fn secondary_active(s: &VmState) -> bool {
    has(s, PROC_CONTROLS, bits::proc::ACTIVATE_SECONDARY)
}

fn proc2(s: &VmState, bit: u32) -> bool {
    secondary_active(s) && has(s, PROC2_CONTROLS, bit)
}

fn ia32e_guest(s: &VmState) -> bool {
    has(s, ENTRY_CONTROLS, bits::entry::IA32E_MODE_GUEST)
}

fn host64(s: &VmState) -> bool {
    has(s, EXIT_CONTROLS, bits::exit::HOST_ADDR_SPACE_SIZE)
}

fn msr_slots(s: &VmState) -> usize {
    s.get(ENTRY_MSR_LOAD_COUNT).min(MSR_AREA_CAPACITY) as usize
}

fn injected(s: &VmState) -> Option<(u64, u64)> {
    let info = s.get(ENTRY_INTR_INFO);
    (info & INTR_INFO_VALID != 0).then_some(((info >> 8) & 7, info & 0xFF))
}

fn pat_ok(v: u64) -> bool {
    (0..8).all(|i| PAT_TYPES.contains(&((v >> (8 * i)) & 0xFF)))
}

fn pat_fix(v: u64) -> u64 {
    (0..8).fold(0, |acc, i| {
        let entry = nearest((v >> (8 * i)) & 7, &PAT_TYPES);
        acc | entry << (8 * i)
    })
}

fn eptp_ok(v: u64, p: &CapabilityProfile) -> bool {
    matches!(v & 7, EPTP_MT_UC | EPTP_MT_WB)
        && v & 0x38 == EPTP_WALK_4
        && v & EPTP_RESERVED_LOW == 0
        && v & !p.phys_mask() == 0
}

fn usable(s: &VmState, seg: Segment) -> bool {
    s.get(seg.access_rights()) & AR_UNUSABLE == 0
}

fn ar_type(ar: u64) -> u64 {
    ar & AR_TYPE
}

fn user_type_ok(seg: Segment, ar: u64) -> bool {
    let t = ar_type(ar);
    ar & AR_S != 0
        && ar & AR_P != 0
        && match seg {
            Segment::Cs => t & 0b1001 == 0b1001,
            Segment::Ss => t & 0b1011 == 0b0011,
            _ => t & 1 == 1 && (t & 0b1000 == 0 || t & 0b0010 != 0),
        }
}

fn user_type_fix(seg: Segment, ar: u64) -> u64 {
    let ar = ar | AR_S | AR_P;
    match seg {
        Segment::Cs => ar | 0b1001,
        Segment::Ss => (ar & !0b1000) | 0b0011,
        _ if ar & 0b1000 != 0 => ar | 0b0011,
        _ => ar | 0b0001,
    }
}

fn granularity_ok(limit: u64, ar: u64) -> bool {
    if ar & AR_G != 0 {
        limit & 0xFFF == 0xFFF
    } else {
        limit >> 20 == 0
    }
}

/// Returns the corrected (limit, access rights) pair.
fn granularity_fix(limit: u64, ar: u64) -> (u64, u64) {
    let g = ar & AR_G != 0;
    let cost_byte = (limit >> 20).count_ones() + g as u32;
    let cost_page = (!limit & 0xFFF).count_ones() + !g as u32;
    if cost_page <= cost_byte {
        (limit | 0xFFF, ar | AR_G)
    } else {
        (limit & 0xF_FFFF, ar & !AR_G)
    }
}

fn tr_type_ok(ar: u64, ia32e: bool) -> bool {
    let t = ar_type(ar);
    let type_ok = if ia32e { t == 11 } else { t == 3 || t == 11 };
    type_ok && ar & AR_S == 0 && ar & AR_P != 0
}

fn activity_fix(v: u64, p: &CapabilityProfile) -> u64 {
    if v > ACTIVITY_WAIT_SIPI {
        return ACTIVITY_ACTIVE;
    }
    let supported: Vec<u64> = (0..=ACTIVITY_WAIT_SIPI).filter(|&a| p.activity_supported(a)).collect();
    nearest(v, &supported)
}

fn interruptibility_fix(s: &VmState) -> u64 {
    let mut v = s.get(GUEST_INTERRUPTIBILITY) & INTERRUPTIBILITY_VALID & !BLOCKING_SMI;
    if v & BLOCKING_STI != 0 {
        v &= !BLOCKING_MOV_SS;
    }
    if s.get(GUEST_RFLAGS) & RFLAGS_IF == 0 {
        v &= !BLOCKING_STI;
    }
    if s.get(GUEST_ACTIVITY_STATE) != ACTIVITY_ACTIVE {
        v &= !(BLOCKING_STI | BLOCKING_MOV_SS);
    }
    match injected(s) {
        Some((INTR_TYPE_EXT_INT, _)) => v &= !(BLOCKING_STI | BLOCKING_MOV_SS),
        Some((INTR_TYPE_NMI, _)) => v &= !BLOCKING_MOV_SS,
        _ => {}
    }
    v
}

fn rflags_fix(s: &VmState) -> u64 {
    let mut v = (s.get(GUEST_RFLAGS) | RFLAGS_FIXED1) & !RFLAGS_RESERVED;
    if ia32e_guest(s) || s.get(GUEST_CR0) & CR0_PE == 0 {
        v &= !RFLAGS_VM;
    }
    if matches!(injected(s), Some((INTR_TYPE_EXT_INT, _))) {
        v |= RFLAGS_IF;
    }
    v
}

fn event_fix(info: u64) -> u64 {
    let mut v = info & !INTR_INFO_RESERVED;
    if (v >> 8) & 7 == INTR_TYPE_RESERVED {
        v &= !(1 << 8);
    }
    match (v >> 8) & 7 {
        INTR_TYPE_NMI => v = (v & !0xFF) | 2,
        INTR_TYPE_HW_EXCEPTION => v &= !0xE0,
        _ => {}
    }
    v
}

fn holds(c: CheckId, s: &VmState, p: &CapabilityProfile) -> bool {
    use CheckId::*;
    let g = |f| s.get(f);
    match c {
        PIN_CONTROLS_RESERVED => p.masks(CapReg::Pin).admits(g(PIN_CONTROLS)),
        PROC_CONTROLS_RESERVED => p.masks(CapReg::Proc).admits(g(PROC_CONTROLS)),
        SECONDARY_ACTIVATION => secondary_active(s) || g(PROC2_CONTROLS) == 0,
        PROC2_CONTROLS_RESERVED => !secondary_active(s) || p.masks(CapReg::Proc2).admits(g(PROC2_CONTROLS)),
        EXIT_CONTROLS_RESERVED => p.masks(CapReg::Exit).admits(g(EXIT_CONTROLS)),
        ENTRY_CONTROLS_RESERVED => p.masks(CapReg::Entry).admits(g(ENTRY_CONTROLS)),
        HOST_ADDR_SPACE_IA32E => !ia32e_guest(s) || host64(s),
        UNRESTRICTED_GUEST_REQUIRES_EPT => {
            !proc2(s, bits::proc2::UNRESTRICTED_GUEST) || proc2(s, bits::proc2::ENABLE_EPT)
        }
        VPID_NONZERO => !proc2(s, bits::proc2::ENABLE_VPID) || g(VPID) != 0,
        EPTP_VALID => !proc2(s, bits::proc2::ENABLE_EPT) || eptp_ok(g(EPT_POINTER), p),
        IO_BITMAP_ADDRS => {
            !has(s, PROC_CONTROLS, bits::proc::USE_IO_BITMAPS)
                || (aligned_below(g(IO_BITMAP_A), 0x1000, p) && aligned_below(g(IO_BITMAP_B), 0x1000, p))
        }
        MSR_BITMAP_ADDR => {
            !has(s, PROC_CONTROLS, bits::proc::USE_MSR_BITMAPS) || aligned_below(g(MSR_BITMAP), 0x1000, p)
        }
        TPR_SHADOW_CONFIG => {
            !has(s, PROC_CONTROLS, bits::proc::TPR_SHADOW)
                || (aligned_below(g(VIRTUAL_APIC_ADDR), 0x1000, p) && g(TPR_THRESHOLD) & TPR_THRESHOLD_RESERVED == 0)
        }
        POSTED_INTERRUPT_CONFIG => {
            !has(s, PIN_CONTROLS, bits::pin::POSTED_INTERRUPTS)
                || (g(POSTED_INTR_NV) & POSTED_NV_RESERVED == 0 && aligned_below(g(POSTED_INTR_DESC), 64, p))
        }
        CR3_TARGET_COUNT_RANGE => g(CR3_TARGET_COUNT) <= CR3_TARGET_CAPACITY,
        EXIT_MSR_AREAS => [(EXIT_MSR_STORE_COUNT, EXIT_MSR_STORE_ADDR), (EXIT_MSR_LOAD_COUNT, EXIT_MSR_LOAD_ADDR)]
            .iter()
            .all(|&(n, a)| g(n) <= MSR_AREA_CAPACITY && (g(n) == 0 || aligned_below(g(a), 16, p))),
        MSRLOAD_COUNT => g(ENTRY_MSR_LOAD_COUNT) <= MSR_AREA_CAPACITY,
        MSRLOAD_AREA_ADDR => g(ENTRY_MSR_LOAD_COUNT) == 0 || aligned_below(g(ENTRY_MSR_LOAD_ADDR), 16, p),
        MSRLOAD_INDEX_VALID => (0..msr_slots(s)).all(|i| LOADABLE_MSRS.contains(&(g(MSR_LOAD_INDEX[i]) as u32))),
        MSRLOAD_CANONICAL => (0..msr_slots(s)).all(|i| {
            let idx = g(MSR_LOAD_INDEX[i]);
            idx > u32::MAX as u64 || !msr_holds_address(idx as u32) || is_canonical(g(MSR_LOAD_VALUE[i]))
        }),
        ENTRY_EVENT_INJECTION => {
            let info = g(ENTRY_INTR_INFO);
            info & INTR_INFO_VALID == 0
                || (event_fix(info) == info
                    && (info & INTR_INFO_DELIVER_CODE == 0 || g(ENTRY_EXCEPTION_ERROR_CODE) >> 16 == 0))
        }

        HOST_CR0_FIXED => g(HOST_CR0) & !CR0_VALID == 0 && g(HOST_CR0) & CR0_NE != 0,
        HOST_CR0_PG_PE => g(HOST_CR0) & CR0_PG == 0 || g(HOST_CR0) & CR0_PE != 0,
        HOST_CR4_FIXED => g(HOST_CR4) & !CR4_VALID == 0 && g(HOST_CR4) & CR4_VMXE != 0,
        HOST_CR3_WIDTH => g(HOST_CR3) & !p.phys_mask() == 0,
        HOST_ADDR_SPACE_CR4 => {
            if host64(s) {
                g(HOST_CR4) & CR4_PAE != 0
            } else {
                g(HOST_CR4) & CR4_PCIDE == 0
            }
        }
        HOST_EFER => {
            let want = if host64(s) { EFER_LMA | EFER_LME } else { 0 };
            g(fld::HOST_EFER) & !EFER_VALID == 0 && g(fld::HOST_EFER) & (EFER_LMA | EFER_LME) == want
        }
        HOST_RIP => {
            if host64(s) {
                is_canonical(g(fld::HOST_RIP))
            } else {
                fits32(g(fld::HOST_RIP))
            }
        }
        HOST_SELECTOR_RPL_TI => HOST_SELECTORS.iter().all(|&f| g(f) & SELECTOR_RPL_TI == 0),
        HOST_CS_TR_NONZERO => g(HOST_CS_SELECTOR) != 0 && g(HOST_TR_SELECTOR) != 0 && (host64(s) || g(HOST_SS_SELECTOR) != 0),
        HOST_CANONICAL_BASES => HOST_CANONICAL.iter().all(|&f| is_canonical(g(f))),
        HOST_PAT_VALID => !has(s, EXIT_CONTROLS, bits::exit::LOAD_PAT) || pat_ok(g(HOST_PAT)),

        GUEST_RESERVED_FIELDS => c.fields().iter().all(|&f| g(f) == 0),
        GUEST_CR0_FIXED => g(GUEST_CR0) & !CR0_VALID == 0 && g(GUEST_CR0) & CR0_NE != 0,
        GUEST_IA32E_REQUIRES_PG => !ia32e_guest(s) || g(GUEST_CR0) & CR0_PG != 0,
        GUEST_CR0_PG_PE => g(GUEST_CR0) & CR0_PG == 0 || g(GUEST_CR0) & CR0_PE != 0,
        GUEST_CR0_PE_WITHOUT_UG => proc2(s, bits::proc2::UNRESTRICTED_GUEST) || g(GUEST_CR0) & CR0_PE != 0,
        GUEST_CR4_FIXED => g(GUEST_CR4) & !CR4_VALID == 0 && g(GUEST_CR4) & CR4_VMXE != 0,
        GUEST_IA32E_REQUIRES_PAE => !ia32e_guest(s) || g(GUEST_CR4) & CR4_PAE != 0,
        GUEST_CR4_PCIDE => ia32e_guest(s) || g(GUEST_CR4) & CR4_PCIDE == 0,
        GUEST_CR3_WIDTH => g(GUEST_CR3) & !p.phys_mask() == 0,
        GUEST_DEBUG_STATE => fits32(g(GUEST_DR7)) && g(GUEST_DEBUGCTL) & !DEBUGCTL_VALID == 0,
        GUEST_EFER_RESERVED => g(GUEST_EFER) & !EFER_VALID == 0,
        GUEST_IA32E_REQUIRES_LME => !ia32e_guest(s) || g(GUEST_EFER) & EFER_LME != 0,
        GUEST_EFER_LMA => {
            let lma = g(GUEST_EFER) & EFER_LMA != 0;
            let lme_pg = g(GUEST_EFER) & EFER_LME != 0 && g(GUEST_CR0) & CR0_PG != 0;
            lma == ia32e_guest(s) && lma == lme_pg
        }
        GUEST_LME_REQUIRES_PAE => g(GUEST_EFER) & EFER_LME == 0 || g(GUEST_CR4) & CR4_PAE != 0,
        GUEST_RFLAGS => rflags_fix(s) == g(fld::GUEST_RFLAGS),
        GUEST_SEGMENT_AR_RESERVED => Segment::ALL.iter().all(|seg| g(seg.access_rights()) & AR_RESERVED == 0),
        GUEST_SEGMENT_USABLE => usable(s, Segment::Cs) && usable(s, Segment::Tr),
        GUEST_SEGMENT_TYPE => Segment::ALL
            .iter()
            .filter(|seg| seg.is_user() && usable(s, **seg))
            .all(|&seg| user_type_ok(seg, g(seg.access_rights()))),
        GUEST_SEGMENT_GRANULARITY => Segment::ALL
            .iter()
            .filter(|seg| usable(s, **seg))
            .all(|seg| granularity_ok(g(seg.limit()), g(seg.access_rights()))),
        GUEST_SS_DPL => {
            !usable(s, Segment::Ss) || (g(GUEST_SS_AR) & AR_DPL) >> AR_DPL_SHIFT == g(GUEST_SS_SELECTOR) & 3
        }
        GUEST_CS_LONG_MODE => !ia32e_guest(s) || g(GUEST_CS_AR) & AR_L == 0 || g(GUEST_CS_AR) & AR_DB == 0,
        GUEST_TR_BUSY_TSS => tr_type_ok(g(GUEST_TR_AR), ia32e_guest(s)) && g(GUEST_TR_SELECTOR) & SELECTOR_TI == 0,
        GUEST_LDTR_TYPE => {
            let ar = g(GUEST_LDTR_AR);
            !usable(s, Segment::Ldtr)
                || (ar_type(ar) == 2 && ar & AR_S == 0 && ar & AR_P != 0 && g(GUEST_LDTR_SELECTOR) & SELECTOR_TI == 0)
        }
        GUEST_SEGMENT_BASES => Segment::ALL.iter().all(|seg| {
            let b = g(seg.base());
            match seg {
                Segment::Es | Segment::Cs | Segment::Ss | Segment::Ds => fits32(b),
                _ => is_canonical(b),
            }
        }),
        GUEST_DESCRIPTOR_TABLES => {
            is_canonical(g(GUEST_GDTR_BASE))
                && is_canonical(g(GUEST_IDTR_BASE))
                && g(GUEST_GDTR_LIMIT) >> 16 == 0
                && g(GUEST_IDTR_LIMIT) >> 16 == 0
        }
        GUEST_RIP => {
            if ia32e_guest(s) && g(GUEST_CS_AR) & AR_L != 0 {
                is_canonical(g(fld::GUEST_RIP))
            } else {
                fits32(g(fld::GUEST_RIP))
            }
        }
        GUEST_SYSENTER_CANONICAL => is_canonical(g(GUEST_SYSENTER_ESP)) && is_canonical(g(GUEST_SYSENTER_EIP)),
        GUEST_PAT_VALID => !has(s, ENTRY_CONTROLS, bits::entry::LOAD_PAT) || pat_ok(g(GUEST_PAT)),
        GUEST_ACTIVITY_STATE => p.activity_supported(g(fld::GUEST_ACTIVITY_STATE)),
        GUEST_INTERRUPTIBILITY => interruptibility_fix(s) == g(fld::GUEST_INTERRUPTIBILITY),
        GUEST_PENDING_DEBUG => g(GUEST_PENDING_DBG) & !PENDING_DBG_VALID == 0,
        GUEST_LINK_POINTER => g(fld::GUEST_LINK_POINTER) == LINK_POINTER_NONE,
        GUEST_VGIF_STATE => g(fld::GUEST_VGIF_STATE) & !VGIF_VALID == 0,
    }
}

fn correct(c: CheckId, s: &mut VmState, p: &CapabilityProfile) {
    use CheckId::*;
    let g = |s: &VmState, f| s.get(f);
    match c {
        PIN_CONTROLS_RESERVED => s.set(PIN_CONTROLS, masked(g(s, PIN_CONTROLS), p.masks(CapReg::Pin))),
        PROC_CONTROLS_RESERVED => s.set(PROC_CONTROLS, masked(g(s, PROC_CONTROLS), p.masks(CapReg::Proc))),
        SECONDARY_ACTIVATION => s.set(PROC2_CONTROLS, 0),
        PROC2_CONTROLS_RESERVED => s.set(PROC2_CONTROLS, masked(g(s, PROC2_CONTROLS), p.masks(CapReg::Proc2))),
        EXIT_CONTROLS_RESERVED => s.set(EXIT_CONTROLS, masked(g(s, EXIT_CONTROLS), p.masks(CapReg::Exit))),
        ENTRY_CONTROLS_RESERVED => s.set(ENTRY_CONTROLS, masked(g(s, ENTRY_CONTROLS), p.masks(CapReg::Entry))),
        HOST_ADDR_SPACE_IA32E => {
            s.set(EXIT_CONTROLS, g(s, EXIT_CONTROLS) | bits::exit::HOST_ADDR_SPACE_SIZE as u64)
        }
        UNRESTRICTED_GUEST_REQUIRES_EPT => {
            s.set(PROC2_CONTROLS, g(s, PROC2_CONTROLS) | bits::proc2::ENABLE_EPT as u64)
        }
        VPID_NONZERO => s.set(VPID, 1),
        EPTP_VALID => {
            let v = g(s, EPT_POINTER);
            let mt = nearest(v & 7, &[EPTP_MT_UC, EPTP_MT_WB]);
            let v = (v & !0x3F & !EPTP_RESERVED_LOW & p.phys_mask()) | EPTP_WALK_4 | mt;
            s.set(EPT_POINTER, v);
        }
        IO_BITMAP_ADDRS => {
            for f in [IO_BITMAP_A, IO_BITMAP_B] {
                s.set(f, align_below(g(s, f), 0x1000, p));
            }
        }
        MSR_BITMAP_ADDR => s.set(MSR_BITMAP, align_below(g(s, MSR_BITMAP), 0x1000, p)),
        TPR_SHADOW_CONFIG => {
            s.set(VIRTUAL_APIC_ADDR, align_below(g(s, VIRTUAL_APIC_ADDR), 0x1000, p));
            s.set(TPR_THRESHOLD, g(s, TPR_THRESHOLD) & !TPR_THRESHOLD_RESERVED);
        }
        POSTED_INTERRUPT_CONFIG => {
            s.set(POSTED_INTR_NV, g(s, POSTED_INTR_NV) & !POSTED_NV_RESERVED);
            s.set(POSTED_INTR_DESC, align_below(g(s, POSTED_INTR_DESC), 64, p));
        }
        CR3_TARGET_COUNT_RANGE => s.set(CR3_TARGET_COUNT, nearest(g(s, CR3_TARGET_COUNT), &[0, 1, 2, 3, 4])),
        EXIT_MSR_AREAS => {
            for (n, a) in [(EXIT_MSR_STORE_COUNT, EXIT_MSR_STORE_ADDR), (EXIT_MSR_LOAD_COUNT, EXIT_MSR_LOAD_ADDR)] {
                if g(s, n) > MSR_AREA_CAPACITY {
                    s.set(n, nearest(g(s, n), &[0, 1, 2, 3, 4]));
                }
                if g(s, n) != 0 {
                    s.set(a, align_below(g(s, a), 16, p));
                }
            }
        }
        MSRLOAD_COUNT => s.set(ENTRY_MSR_LOAD_COUNT, nearest(g(s, ENTRY_MSR_LOAD_COUNT), &[0, 1, 2, 3, 4])),
        MSRLOAD_AREA_ADDR => s.set(ENTRY_MSR_LOAD_ADDR, align_below(g(s, ENTRY_MSR_LOAD_ADDR), 16, p)),
        MSRLOAD_INDEX_VALID => {
            let set = LOADABLE_MSRS.map(u64::from);
            for &f in &MSR_LOAD_INDEX[..msr_slots(s)] {
                if !set.contains(&g(s, f)) {
                    s.set(f, nearest(g(s, f), &set));
                }
            }
        }
        MSRLOAD_CANONICAL => {
            for i in 0..msr_slots(s) {
                let idx = g(s, MSR_LOAD_INDEX[i]);
                if idx <= u32::MAX as u64 && msr_holds_address(idx as u32) {
                    s.set(MSR_LOAD_VALUE[i], make_canonical(g(s, MSR_LOAD_VALUE[i])));
                }
            }
        }
        ENTRY_EVENT_INJECTION => {
            let info = event_fix(g(s, ENTRY_INTR_INFO));
            s.set(ENTRY_INTR_INFO, info);
            if info & INTR_INFO_DELIVER_CODE != 0 {
                s.set(ENTRY_EXCEPTION_ERROR_CODE, g(s, ENTRY_EXCEPTION_ERROR_CODE) & 0xFFFF);
            }
        }

        HOST_CR0_FIXED => s.set(HOST_CR0, (g(s, HOST_CR0) & CR0_VALID) | CR0_NE),
        HOST_CR0_PG_PE => s.set(HOST_CR0, g(s, HOST_CR0) | CR0_PE),
        HOST_CR4_FIXED => s.set(HOST_CR4, (g(s, HOST_CR4) & CR4_VALID) | CR4_VMXE),
        HOST_CR3_WIDTH => s.set(HOST_CR3, g(s, HOST_CR3) & p.phys_mask()),
        HOST_ADDR_SPACE_CR4 => {
            let v = g(s, HOST_CR4);
            s.set(HOST_CR4, if host64(s) { v | CR4_PAE } else { v & !CR4_PCIDE });
        }
        HOST_EFER => {
            let want = if host64(s) { EFER_LMA | EFER_LME } else { 0 };
            s.set(fld::HOST_EFER, (g(s, fld::HOST_EFER) & EFER_VALID & !(EFER_LMA | EFER_LME)) | want);
        }
        HOST_RIP => {
            let v = g(s, fld::HOST_RIP);
            s.set(fld::HOST_RIP, if host64(s) { make_canonical(v) } else { v & 0xFFFF_FFFF });
        }
        HOST_SELECTOR_RPL_TI => {
            for f in HOST_SELECTORS {
                s.set(f, g(s, f) & !SELECTOR_RPL_TI);
            }
        }
        HOST_CS_TR_NONZERO => {
            let mut need = vec![HOST_CS_SELECTOR, HOST_TR_SELECTOR];
            if !host64(s) {
                need.push(HOST_SS_SELECTOR);
            }
            for f in need {
                if g(s, f) == 0 {
                    s.set(f, 8);
                }
            }
        }
        HOST_CANONICAL_BASES => {
            for f in HOST_CANONICAL {
                s.set(f, make_canonical(g(s, f)));
            }
        }
        HOST_PAT_VALID => s.set(HOST_PAT, pat_fix(g(s, HOST_PAT))),

        GUEST_RESERVED_FIELDS => {
            for &f in c.fields() {
                s.set(f, 0);
            }
        }
        GUEST_CR0_FIXED => s.set(GUEST_CR0, (g(s, GUEST_CR0) & CR0_VALID) | CR0_NE),
        GUEST_IA32E_REQUIRES_PG => s.set(GUEST_CR0, g(s, GUEST_CR0) | CR0_PG),
        GUEST_CR0_PG_PE | GUEST_CR0_PE_WITHOUT_UG => s.set(GUEST_CR0, g(s, GUEST_CR0) | CR0_PE),
        GUEST_CR4_FIXED => s.set(GUEST_CR4, (g(s, GUEST_CR4) & CR4_VALID) | CR4_VMXE),
        GUEST_IA32E_REQUIRES_PAE | GUEST_LME_REQUIRES_PAE => s.set(GUEST_CR4, g(s, GUEST_CR4) | CR4_PAE),
        GUEST_CR4_PCIDE => s.set(GUEST_CR4, g(s, GUEST_CR4) & !CR4_PCIDE),
        GUEST_CR3_WIDTH => s.set(GUEST_CR3, g(s, GUEST_CR3) & p.phys_mask()),
        GUEST_DEBUG_STATE => {
            s.set(GUEST_DR7, g(s, GUEST_DR7) & 0xFFFF_FFFF);
            s.set(GUEST_DEBUGCTL, g(s, GUEST_DEBUGCTL) & DEBUGCTL_VALID);
        }
        GUEST_EFER_RESERVED => s.set(GUEST_EFER, g(s, GUEST_EFER) & EFER_VALID),
        GUEST_IA32E_REQUIRES_LME => s.set(GUEST_EFER, g(s, GUEST_EFER) | EFER_LME),
        GUEST_EFER_LMA => {
            let mut v = g(s, GUEST_EFER);
            if ia32e_guest(s) {
                v |= EFER_LMA;
            } else {
                v &= !EFER_LMA;
                if g(s, GUEST_CR0) & CR0_PG != 0 {
                    v &= !EFER_LME;
                }
            }
            s.set(GUEST_EFER, v);
        }
        GUEST_RFLAGS => s.set(fld::GUEST_RFLAGS, rflags_fix(s)),
        GUEST_SEGMENT_AR_RESERVED => {
            for seg in Segment::ALL {
                s.set(seg.access_rights(), g(s, seg.access_rights()) & !AR_RESERVED);
            }
        }
        GUEST_SEGMENT_USABLE => {
            for f in [GUEST_CS_AR, GUEST_TR_AR] {
                s.set(f, g(s, f) & !AR_UNUSABLE);
            }
        }
        GUEST_SEGMENT_TYPE => {
            for seg in Segment::ALL {
                let ar = g(s, seg.access_rights());
                if seg.is_user() && usable(s, seg) && !user_type_ok(seg, ar) {
                    s.set(seg.access_rights(), user_type_fix(seg, ar));
                }
            }
        }
        GUEST_SEGMENT_GRANULARITY => {
            for seg in Segment::ALL {
                let (limit, ar) = (g(s, seg.limit()), g(s, seg.access_rights()));
                if usable(s, seg) && !granularity_ok(limit, ar) {
                    let (limit, ar) = granularity_fix(limit, ar);
                    s.set(seg.limit(), limit);
                    s.set(seg.access_rights(), ar);
                }
            }
        }
        GUEST_SS_DPL => {
            let rpl = g(s, GUEST_SS_SELECTOR) & 3;
            s.set(GUEST_SS_AR, (g(s, GUEST_SS_AR) & !AR_DPL) | rpl << AR_DPL_SHIFT);
        }
        GUEST_CS_LONG_MODE => s.set(GUEST_CS_AR, g(s, GUEST_CS_AR) & !AR_DB),
        GUEST_TR_BUSY_TSS => {
            let ar = g(s, GUEST_TR_AR);
            let t = if ia32e_guest(s) { 11 } else { nearest(ar_type(ar), &[3, 11]) };
            s.set(GUEST_TR_AR, (ar & !AR_TYPE & !AR_S) | AR_P | t);
            s.set(GUEST_TR_SELECTOR, g(s, GUEST_TR_SELECTOR) & !SELECTOR_TI);
        }
        GUEST_LDTR_TYPE => {
            s.set(GUEST_LDTR_AR, (g(s, GUEST_LDTR_AR) & !AR_TYPE & !AR_S) | AR_P | 2);
            s.set(GUEST_LDTR_SELECTOR, g(s, GUEST_LDTR_SELECTOR) & !SELECTOR_TI);
        }
        GUEST_SEGMENT_BASES => {
            for seg in Segment::ALL {
                let b = g(s, seg.base());
                let fixed = match seg {
                    Segment::Es | Segment::Cs | Segment::Ss | Segment::Ds => b & 0xFFFF_FFFF,
                    _ => make_canonical(b),
                };
                s.set(seg.base(), fixed);
            }
        }
        GUEST_DESCRIPTOR_TABLES => {
            for f in [GUEST_GDTR_BASE, GUEST_IDTR_BASE] {
                s.set(f, make_canonical(g(s, f)));
            }
            for f in [GUEST_GDTR_LIMIT, GUEST_IDTR_LIMIT] {
                s.set(f, g(s, f) & 0xFFFF);
            }
        }
        GUEST_RIP => {
            let v = g(s, fld::GUEST_RIP);
            let long = ia32e_guest(s) && g(s, GUEST_CS_AR) & AR_L != 0;
            s.set(fld::GUEST_RIP, if long { make_canonical(v) } else { v & 0xFFFF_FFFF });
        }
        GUEST_SYSENTER_CANONICAL => {
            for f in [GUEST_SYSENTER_ESP, GUEST_SYSENTER_EIP] {
                s.set(f, make_canonical(g(s, f)));
            }
        }
        GUEST_PAT_VALID => s.set(GUEST_PAT, pat_fix(g(s, GUEST_PAT))),
        GUEST_ACTIVITY_STATE => s.set(fld::GUEST_ACTIVITY_STATE, activity_fix(g(s, fld::GUEST_ACTIVITY_STATE), p)),
        GUEST_INTERRUPTIBILITY => s.set(fld::GUEST_INTERRUPTIBILITY, interruptibility_fix(s)),
        GUEST_PENDING_DEBUG => s.set(GUEST_PENDING_DBG, g(s, GUEST_PENDING_DBG) & PENDING_DBG_VALID),
        GUEST_LINK_POINTER => s.set(fld::GUEST_LINK_POINTER, LINK_POINTER_NONE),
        GUEST_VGIF_STATE => s.set(fld::GUEST_VGIF_STATE, g(s, fld::GUEST_VGIF_STATE) & VGIF_VALID),
    }
}

/// Feature gates behind which checks are skipped.
pub fn gating_features() -> Vec<FeatureId> {
    let mut out: Vec<FeatureId> = CheckId::ALL.iter().filter_map(|c| c.gate()).collect();
    out.sort();
    out.dedup();
    out
}
