// SPDX-License-Identifier: Apache-2.0

//! The VM-entry check catalog.
//!
//! This module is the single written description of the consistency rules. The
//! validator and the target oracle each implement the rules independently
//! against it; only identifiers, field lists and architectural constants are
//! shared.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::capability::FeatureId;
use crate::state::{field::*, FieldGroup, FieldId, FIELD_COUNT, FIRST_RESERVED};

/// Architectural constants referenced by the rules.
pub mod arch {
    pub const CR0_PE: u64 = 1 << 0;
    pub const CR0_NE: u64 = 1 << 5;
    pub const CR0_PG: u64 = 1 << 31;
    /// PE MP EM TS ET NE WP AM NW CD PG.
    pub const CR0_VALID: u64 = 0xE005_003F;

    pub const CR4_PAE: u64 = 1 << 5;
    pub const CR4_VMXE: u64 = 1 << 13;
    pub const CR4_PCIDE: u64 = 1 << 17;
    /// Bits 0-11, 13-14, 16-18, 20-22. LA57 (bit 12) is unsupported.
    pub const CR4_VALID: u64 = 0x0077_6FFF;

    pub const EFER_SCE: u64 = 1 << 0;
    pub const EFER_LME: u64 = 1 << 8;
    pub const EFER_LMA: u64 = 1 << 10;
    pub const EFER_NXE: u64 = 1 << 11;
    pub const EFER_VALID: u64 = EFER_SCE | EFER_LME | EFER_LMA | EFER_NXE;

    pub const RFLAGS_FIXED1: u64 = 1 << 1;
    pub const RFLAGS_IF: u64 = 1 << 9;
    pub const RFLAGS_VM: u64 = 1 << 17;
    /// Bits 63:22, 15, 5 and 3.
    pub const RFLAGS_RESERVED: u64 = !0x3F_FFFF | 1 << 15 | 1 << 5 | 1 << 3;

    pub const DEBUGCTL_VALID: u64 = 0xFFC3;
    pub const PENDING_DBG_VALID: u64 = 0x1_500F;

    pub const AR_TYPE: u64 = 0xF;
    pub const AR_S: u64 = 1 << 4;
    pub const AR_DPL_SHIFT: u32 = 5;
    pub const AR_DPL: u64 = 3 << AR_DPL_SHIFT;
    pub const AR_P: u64 = 1 << 7;
    pub const AR_L: u64 = 1 << 13;
    pub const AR_DB: u64 = 1 << 14;
    pub const AR_G: u64 = 1 << 15;
    pub const AR_UNUSABLE: u64 = 1 << 16;
    /// Bits 11:8 and 31:17.
    pub const AR_RESERVED: u64 = 0xFFFE_0F00;

    pub const SELECTOR_RPL_TI: u64 = 0x7;
    pub const SELECTOR_TI: u64 = 0x4;

    pub const INTR_INFO_VALID: u64 = 1 << 31;
    pub const INTR_INFO_DELIVER_CODE: u64 = 1 << 11;
    pub const INTR_INFO_RESERVED: u64 = 0x7FFF_F000;
    pub const INTR_TYPE_EXT_INT: u64 = 0;
    pub const INTR_TYPE_RESERVED: u64 = 1;
    pub const INTR_TYPE_NMI: u64 = 2;
    pub const INTR_TYPE_HW_EXCEPTION: u64 = 3;

    pub const BLOCKING_STI: u64 = 1 << 0;
    pub const BLOCKING_MOV_SS: u64 = 1 << 1;
    pub const BLOCKING_SMI: u64 = 1 << 2;
    pub const BLOCKING_NMI: u64 = 1 << 3;
    pub const INTERRUPTIBILITY_VALID: u64 = 0xF;

    pub const ACTIVITY_ACTIVE: u64 = 0;
    pub const ACTIVITY_HLT: u64 = 1;
    pub const ACTIVITY_SHUTDOWN: u64 = 2;
    pub const ACTIVITY_WAIT_SIPI: u64 = 3;

    pub const VGIF_VALID: u64 = 0x3;
    pub const VGIF_FLAG: u64 = 1 << 0;

    pub const EPTP_MT_UC: u64 = 0;
    pub const EPTP_MT_WB: u64 = 6;
    pub const EPTP_WALK_4: u64 = 3 << 3;
    pub const EPTP_RESERVED_LOW: u64 = 0xF80;

    pub const LINK_POINTER_NONE: u64 = u64::MAX;

    /// Memory types permitted in each PAT entry.
    pub const PAT_TYPES: [u64; 6] = [0, 1, 4, 5, 6, 7];

    pub const MSR_AREA_CAPACITY: u64 = 4;
    pub const CR3_TARGET_CAPACITY: u64 = 4;
    pub const TPR_THRESHOLD_RESERVED: u64 = 0xFFFF_FFF0;
    pub const POSTED_NV_RESERVED: u64 = 0xFF00;

    pub const PAGE_MASK: u64 = 0xFFF;

    pub const MSR_SYSENTER_ESP: u32 = 0x175;
    pub const MSR_SYSENTER_EIP: u32 = 0x176;
    pub const MSR_STAR: u32 = 0xC000_0081;
    pub const MSR_LSTAR: u32 = 0xC000_0082;
    pub const MSR_CSTAR: u32 = 0xC000_0083;
    pub const MSR_FS_BASE: u32 = 0xC000_0100;
    pub const MSR_GS_BASE: u32 = 0xC000_0101;
    pub const MSR_KERNEL_GS_BASE: u32 = 0xC000_0102;
    pub const MSR_TSC_AUX: u32 = 0xC000_0103;

    /// MSRs that may appear in the entry MSR-load area.
    pub const LOADABLE_MSRS: [u32; 9] = [
        MSR_SYSENTER_ESP,
        MSR_SYSENTER_EIP,
        MSR_STAR,
        MSR_LSTAR,
        MSR_CSTAR,
        MSR_FS_BASE,
        MSR_GS_BASE,
        MSR_KERNEL_GS_BASE,
        MSR_TSC_AUX,
    ];

    /// MSRs holding linear addresses, which must be canonical when loaded.
    pub fn msr_holds_address(index: u32) -> bool {
        matches!(
            index,
            MSR_SYSENTER_ESP
                | MSR_SYSENTER_EIP
                | MSR_LSTAR
                | MSR_CSTAR
                | MSR_FS_BASE
                | MSR_GS_BASE
                | MSR_KERNEL_GS_BASE
        )
    }
}

/// Guest segment registers in catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Es,
    Cs,
    Ss,
    Ds,
    Fs,
    Gs,
    Ldtr,
    Tr,
}

impl Segment {
    pub const ALL: [Segment; 8] = [
        Self::Es,
        Self::Cs,
        Self::Ss,
        Self::Ds,
        Self::Fs,
        Self::Gs,
        Self::Ldtr,
        Self::Tr,
    ];

    pub const fn selector(self) -> FieldId {
        FieldId(GUEST_ES_SELECTOR.0 + self as u16)
    }
    pub const fn limit(self) -> FieldId {
        FieldId(GUEST_ES_LIMIT.0 + self as u16)
    }
    pub const fn access_rights(self) -> FieldId {
        FieldId(GUEST_ES_AR.0 + self as u16)
    }
    pub const fn base(self) -> FieldId {
        FieldId(GUEST_ES_BASE.0 + self as u16)
    }

    /// Code/data segments, as opposed to LDTR and TR.
    pub fn is_user(self) -> bool {
        !matches!(self, Self::Ldtr | Self::Tr)
    }
}

pub const MSR_LOAD_INDEX: [FieldId; 4] = [MSR_LOAD_INDEX_0, MSR_LOAD_INDEX_1, MSR_LOAD_INDEX_2, MSR_LOAD_INDEX_3];
pub const MSR_LOAD_VALUE: [FieldId; 4] = [MSR_LOAD_VALUE_0, MSR_LOAD_VALUE_1, MSR_LOAD_VALUE_2, MSR_LOAD_VALUE_3];
pub const HOST_SELECTORS: [FieldId; 7] = [
    HOST_ES_SELECTOR,
    HOST_CS_SELECTOR,
    HOST_SS_SELECTOR,
    HOST_DS_SELECTOR,
    HOST_FS_SELECTOR,
    HOST_GS_SELECTOR,
    HOST_TR_SELECTOR,
];
pub const HOST_CANONICAL: [FieldId; 7] = [
    HOST_FS_BASE,
    HOST_GS_BASE,
    HOST_TR_BASE,
    HOST_GDTR_BASE,
    HOST_IDTR_BASE,
    HOST_SYSENTER_ESP,
    HOST_SYSENTER_EIP,
];

macro_rules! checks {
    ($($id:ident, $group:ident, $gate:expr, $desc:literal, [$($f:expr),* $(,)?];)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[allow(non_camel_case_types, clippy::upper_case_acronyms)]
        pub enum CheckId {
            $($id,)*
        }

        impl CheckId {
            /// Every check in evaluation order: controls, host state, guest state.
            pub const ALL: &'static [CheckId] = &[$(CheckId::$id,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(CheckId::$id => stringify!($id),)*
                }
            }

            pub fn group(self) -> FieldGroup {
                match self {
                    $(CheckId::$id => FieldGroup::$group,)*
                }
            }

            pub fn description(self) -> &'static str {
                match self {
                    $(CheckId::$id => $desc,)*
                }
            }

            /// Feature that must be enabled for the check to apply.
            pub fn gate(self) -> Option<FeatureId> {
                match self {
                    $(CheckId::$id => $gate,)*
                }
            }

            /// Fields the check reads; corrections only ever touch these.
            pub fn fields(self) -> &'static [FieldId] {
                match self {
                    $(CheckId::$id => {
                        const F: &[FieldId] = &[$($f),*];
                        F
                    })*
                }
            }
        }
    };
}

const fn reserved_fields() -> [FieldId; FIELD_COUNT - FIRST_RESERVED] {
    let mut out = [FieldId(0); FIELD_COUNT - FIRST_RESERVED];
    let mut i = 0;
    while i < out.len() {
        out[i] = FieldId((FIRST_RESERVED + i) as u16);
        i += 1;
    }
    out
}

pub const RESERVED_FIELDS: [FieldId; FIELD_COUNT - FIRST_RESERVED] = reserved_fields();

const ALL_AR: [FieldId; 8] = [
    GUEST_ES_AR, GUEST_CS_AR, GUEST_SS_AR, GUEST_DS_AR, GUEST_FS_AR, GUEST_GS_AR, GUEST_LDTR_AR, GUEST_TR_AR,
];

use FeatureId as Feat;

checks! {
    PIN_CONTROLS_RESERVED, ExecutionControl, None,
        "pin-based controls respect the allowed-0/allowed-1 masks", [PIN_CONTROLS];
    PROC_CONTROLS_RESERVED, ExecutionControl, None,
        "primary processor-based controls respect the allowed-0/allowed-1 masks", [PROC_CONTROLS];
    SECONDARY_ACTIVATION, ExecutionControl, None,
        "secondary controls are zero unless activated by the primary controls", [PROC_CONTROLS, PROC2_CONTROLS];
    PROC2_CONTROLS_RESERVED, ExecutionControl, None,
        "active secondary controls respect the allowed-1 mask", [PROC_CONTROLS, PROC2_CONTROLS];
    EXIT_CONTROLS_RESERVED, EntryExitControl, None,
        "VM-exit controls respect the allowed-0/allowed-1 masks", [EXIT_CONTROLS];
    ENTRY_CONTROLS_RESERVED, EntryExitControl, None,
        "VM-entry controls respect the allowed-0/allowed-1 masks", [ENTRY_CONTROLS];
    HOST_ADDR_SPACE_IA32E, EntryExitControl, None,
        "an IA-32e mode guest requires a 64-bit host address space", [EXIT_CONTROLS, ENTRY_CONTROLS];
    UNRESTRICTED_GUEST_REQUIRES_EPT, ExecutionControl, Some(Feat::UnrestrictedGuest),
        "unrestricted guest requires enable-EPT", [PROC_CONTROLS, PROC2_CONTROLS];
    VPID_NONZERO, ExecutionControl, Some(Feat::VirtualProcessorId),
        "enable-VPID requires a nonzero VPID", [PROC_CONTROLS, PROC2_CONTROLS, VPID];
    EPTP_VALID, ExecutionControl, Some(Feat::NestedPaging),
        "with EPT enabled the EPTP memory type is UC or WB, the walk length is 4, reserved bits are clear \
         and the root lies below the physical-address width",
        [PROC_CONTROLS, PROC2_CONTROLS, EPT_POINTER];
    IO_BITMAP_ADDRS, ExecutionControl, Some(Feat::IoBitmaps),
        "I/O bitmap addresses are page aligned and below the physical-address width",
        [PROC_CONTROLS, IO_BITMAP_A, IO_BITMAP_B];
    MSR_BITMAP_ADDR, ExecutionControl, Some(Feat::MsrBitmaps),
        "the MSR bitmap address is page aligned and below the physical-address width",
        [PROC_CONTROLS, MSR_BITMAP];
    TPR_SHADOW_CONFIG, ExecutionControl, Some(Feat::TprShadow),
        "with TPR shadow the virtual-APIC page is page aligned and TPR threshold bits 31:4 are clear",
        [PROC_CONTROLS, VIRTUAL_APIC_ADDR, TPR_THRESHOLD];
    POSTED_INTERRUPT_CONFIG, ExecutionControl, Some(Feat::PostedInterrupts),
        "with posted interrupts the notification vector fits in 8 bits and the descriptor is 64-byte aligned",
        [PIN_CONTROLS, POSTED_INTR_NV, POSTED_INTR_DESC];
    CR3_TARGET_COUNT_RANGE, ExecutionControl, None,
        "the CR3-target count is at most 4", [CR3_TARGET_COUNT];
    EXIT_MSR_AREAS, EntryExitControl, None,
        "exit MSR-store/load counts fit the area and used areas are 16-byte aligned below the physical-address width",
        [EXIT_MSR_STORE_COUNT, EXIT_MSR_LOAD_COUNT, EXIT_MSR_STORE_ADDR, EXIT_MSR_LOAD_ADDR];
    MSRLOAD_COUNT, EntryExitControl, None,
        "the entry MSR-load count does not exceed the area capacity", [ENTRY_MSR_LOAD_COUNT];
    MSRLOAD_AREA_ADDR, EntryExitControl, None,
        "a used entry MSR-load area is 16-byte aligned below the physical-address width",
        [ENTRY_MSR_LOAD_COUNT, ENTRY_MSR_LOAD_ADDR];
    MSRLOAD_INDEX_VALID, EntryExitControl, None,
        "every used MSR-load slot names a loadable MSR",
        [ENTRY_MSR_LOAD_COUNT, MSR_LOAD_INDEX_0, MSR_LOAD_INDEX_1, MSR_LOAD_INDEX_2, MSR_LOAD_INDEX_3];
    MSRLOAD_CANONICAL, EntryExitControl, None,
        "address-holding MSRs in used MSR-load slots receive canonical values",
        [ENTRY_MSR_LOAD_COUNT, MSR_LOAD_INDEX_0, MSR_LOAD_INDEX_1, MSR_LOAD_INDEX_2, MSR_LOAD_INDEX_3,
         MSR_LOAD_VALUE_0, MSR_LOAD_VALUE_1, MSR_LOAD_VALUE_2, MSR_LOAD_VALUE_3];
    ENTRY_EVENT_INJECTION, EntryExitControl, None,
        "a valid injected event has a defined type, clear reserved bits, a consistent vector and a 16-bit error code",
        [ENTRY_INTR_INFO, ENTRY_EXCEPTION_ERROR_CODE];
    HOST_CR0_FIXED, HostState, None,
        "host CR0 reserved bits are clear and NE is set", [HOST_CR0];
    HOST_CR0_PG_PE, HostState, None,
        "host CR0.PG requires CR0.PE", [HOST_CR0];
    HOST_CR4_FIXED, HostState, None,
        "host CR4 reserved bits are clear and VMXE is set", [HOST_CR4];
    HOST_CR3_WIDTH, HostState, None,
        "host CR3 lies below the physical-address width", [HOST_CR3];
    HOST_ADDR_SPACE_CR4, HostState, None,
        "a 64-bit host needs CR4.PAE; a 32-bit host needs CR4.PCIDE clear", [EXIT_CONTROLS, HOST_CR4];
    HOST_EFER, HostState, None,
        "host EFER reserved bits are clear and LMA/LME match the host address-space size",
        [EXIT_CONTROLS, HOST_EFER];
    HOST_RIP, HostState, None,
        "host RIP is canonical for a 64-bit host and fits 32 bits otherwise", [EXIT_CONTROLS, HOST_RIP];
    HOST_SELECTOR_RPL_TI, HostState, None,
        "host selectors have RPL 0 and TI 0",
        [HOST_ES_SELECTOR, HOST_CS_SELECTOR, HOST_SS_SELECTOR, HOST_DS_SELECTOR, HOST_FS_SELECTOR,
         HOST_GS_SELECTOR, HOST_TR_SELECTOR];
    HOST_CS_TR_NONZERO, HostState, None,
        "host CS and TR selectors are nonzero, and SS too for a 32-bit host",
        [EXIT_CONTROLS, HOST_CS_SELECTOR, HOST_SS_SELECTOR, HOST_TR_SELECTOR];
    HOST_CANONICAL_BASES, HostState, None,
        "host FS/GS/TR/GDTR/IDTR bases and SYSENTER ESP/EIP are canonical",
        [HOST_FS_BASE, HOST_GS_BASE, HOST_TR_BASE, HOST_GDTR_BASE, HOST_IDTR_BASE, HOST_SYSENTER_ESP,
         HOST_SYSENTER_EIP];
    HOST_PAT_VALID, HostState, Some(Feat::LoadPat),
        "with load-PAT on exit every host PAT entry is a valid memory type", [EXIT_CONTROLS, HOST_PAT];
    GUEST_RESERVED_FIELDS, GuestState, None,
        "reserved padding fields are zero",
        [RESERVED_FIELDS[0], RESERVED_FIELDS[1], RESERVED_FIELDS[2], RESERVED_FIELDS[3], RESERVED_FIELDS[4],
         RESERVED_FIELDS[5], RESERVED_FIELDS[6], RESERVED_FIELDS[7], RESERVED_FIELDS[8], RESERVED_FIELDS[9],
         RESERVED_FIELDS[10], RESERVED_FIELDS[11], RESERVED_FIELDS[12], RESERVED_FIELDS[13], RESERVED_FIELDS[14],
         RESERVED_FIELDS[15], RESERVED_FIELDS[16], RESERVED_FIELDS[17], RESERVED_FIELDS[18], RESERVED_FIELDS[19],
         RESERVED_FIELDS[20], RESERVED_FIELDS[21], RESERVED_FIELDS[22], RESERVED_FIELDS[23], RESERVED_FIELDS[24],
         RESERVED_FIELDS[25], RESERVED_FIELDS[26], RESERVED_FIELDS[27], RESERVED_FIELDS[28], RESERVED_FIELDS[29],
         RESERVED_FIELDS[30], RESERVED_FIELDS[31], RESERVED_FIELDS[32], RESERVED_FIELDS[33], RESERVED_FIELDS[34],
         RESERVED_FIELDS[35], RESERVED_FIELDS[36], RESERVED_FIELDS[37], RESERVED_FIELDS[38], RESERVED_FIELDS[39],
         RESERVED_FIELDS[40], RESERVED_FIELDS[41], RESERVED_FIELDS[42], RESERVED_FIELDS[43], RESERVED_FIELDS[44],
         RESERVED_FIELDS[45], RESERVED_FIELDS[46], RESERVED_FIELDS[47], RESERVED_FIELDS[48]];
    GUEST_CR0_FIXED, GuestState, None,
        "guest CR0 reserved bits are clear and NE is set", [GUEST_CR0];
    GUEST_IA32E_REQUIRES_PG, GuestState, None,
        "an IA-32e mode guest has CR0.PG set", [ENTRY_CONTROLS, GUEST_CR0];
    GUEST_CR0_PG_PE, GuestState, None,
        "guest CR0.PG requires CR0.PE", [GUEST_CR0];
    GUEST_CR0_PE_WITHOUT_UG, GuestState, None,
        "without unrestricted guest, guest CR0.PE is set", [PROC_CONTROLS, PROC2_CONTROLS, GUEST_CR0];
    GUEST_CR4_FIXED, GuestState, None,
        "guest CR4 reserved bits are clear and VMXE is set", [GUEST_CR4];
    GUEST_IA32E_REQUIRES_PAE, GuestState, None,
        "CR4.PAE must be set when IA-32e mode is enabled", [ENTRY_CONTROLS, GUEST_CR4];
    GUEST_CR4_PCIDE, GuestState, None,
        "outside IA-32e mode guest CR4.PCIDE is clear", [ENTRY_CONTROLS, GUEST_CR4];
    GUEST_CR3_WIDTH, GuestState, None,
        "guest CR3 lies below the physical-address width", [GUEST_CR3];
    GUEST_DEBUG_STATE, GuestState, None,
        "guest DR7 bits 63:32 and DEBUGCTL reserved bits are clear", [GUEST_DR7, GUEST_DEBUGCTL];
    GUEST_EFER_RESERVED, GuestState, None,
        "guest EFER reserved bits are clear", [GUEST_EFER];
    GUEST_IA32E_REQUIRES_LME, GuestState, None,
        "an IA-32e mode guest has EFER.LME set", [ENTRY_CONTROLS, GUEST_EFER];
    GUEST_EFER_LMA, GuestState, None,
        "guest EFER.LMA equals the IA-32e entry control and equals LME and CR0.PG",
        [ENTRY_CONTROLS, GUEST_CR0, GUEST_EFER];
    GUEST_LME_REQUIRES_PAE, GuestState, None,
        "guest EFER.LME requires CR4.PAE", [GUEST_EFER, GUEST_CR4];
    GUEST_RFLAGS, GuestState, None,
        "guest RFLAGS bit 1 is set, reserved bits are clear, VM is clear in IA-32e or unpaged-protected-off \
         mode, and IF is set when injecting an external interrupt",
        [ENTRY_CONTROLS, ENTRY_INTR_INFO, GUEST_CR0, GUEST_RFLAGS];
    GUEST_SEGMENT_AR_RESERVED, GuestState, None,
        "guest segment access-rights reserved bits are clear", [
        GUEST_ES_AR, GUEST_CS_AR, GUEST_SS_AR, GUEST_DS_AR, GUEST_FS_AR, GUEST_GS_AR, GUEST_LDTR_AR, GUEST_TR_AR];
    GUEST_SEGMENT_USABLE, GuestState, None,
        "guest CS and TR are usable", [GUEST_CS_AR, GUEST_TR_AR];
    GUEST_SEGMENT_TYPE, GuestState, None,
        "usable code/data segments are present, non-system and of a permitted type",
        [GUEST_ES_AR, GUEST_CS_AR, GUEST_SS_AR, GUEST_DS_AR, GUEST_FS_AR, GUEST_GS_AR];
    GUEST_SEGMENT_GRANULARITY, GuestState, None,
        "usable segment limits agree with the granularity bit",
        [GUEST_ES_LIMIT, GUEST_CS_LIMIT, GUEST_SS_LIMIT, GUEST_DS_LIMIT, GUEST_FS_LIMIT, GUEST_GS_LIMIT,
         GUEST_LDTR_LIMIT, GUEST_TR_LIMIT,
         GUEST_ES_AR, GUEST_CS_AR, GUEST_SS_AR, GUEST_DS_AR, GUEST_FS_AR, GUEST_GS_AR, GUEST_LDTR_AR, GUEST_TR_AR];
    GUEST_SS_DPL, GuestState, None,
        "a usable SS has DPL equal to its selector RPL", [GUEST_SS_SELECTOR, GUEST_SS_AR];
    GUEST_CS_LONG_MODE, GuestState, None,
        "in IA-32e mode a 64-bit CS (L set) has D/B clear", [ENTRY_CONTROLS, GUEST_CS_AR];
    GUEST_TR_BUSY_TSS, GuestState, None,
        "guest TR is a present busy TSS (64-bit in IA-32e mode) with TI clear",
        [ENTRY_CONTROLS, GUEST_TR_SELECTOR, GUEST_TR_AR];
    GUEST_LDTR_TYPE, GuestState, None,
        "a usable LDTR is a present LDT descriptor with TI clear", [GUEST_LDTR_SELECTOR, GUEST_LDTR_AR];
    GUEST_SEGMENT_BASES, GuestState, None,
        "guest CS/SS/DS/ES bases fit 32 bits and FS/GS/LDTR/TR bases are canonical",
        [GUEST_ES_BASE, GUEST_CS_BASE, GUEST_SS_BASE, GUEST_DS_BASE, GUEST_FS_BASE, GUEST_GS_BASE,
         GUEST_LDTR_BASE, GUEST_TR_BASE];
    GUEST_DESCRIPTOR_TABLES, GuestState, None,
        "guest GDTR/IDTR bases are canonical and limits fit 16 bits",
        [GUEST_GDTR_BASE, GUEST_IDTR_BASE, GUEST_GDTR_LIMIT, GUEST_IDTR_LIMIT];
    GUEST_RIP, GuestState, None,
        "guest RIP is canonical with a 64-bit CS in IA-32e mode and fits 32 bits otherwise",
        [ENTRY_CONTROLS, GUEST_CS_AR, GUEST_RIP];
    GUEST_SYSENTER_CANONICAL, GuestState, None,
        "guest SYSENTER ESP/EIP are canonical", [GUEST_SYSENTER_ESP, GUEST_SYSENTER_EIP];
    GUEST_PAT_VALID, GuestState, Some(Feat::LoadPat),
        "with load-PAT on entry every guest PAT entry is a valid memory type", [ENTRY_CONTROLS, GUEST_PAT];
    GUEST_ACTIVITY_STATE, GuestState, None,
        "the activity state is defined and supported by the capability profile", [GUEST_ACTIVITY_STATE];
    GUEST_INTERRUPTIBILITY, GuestState, None,
        "interruptibility reserved bits are clear and blocking is compatible with RFLAGS.IF, the activity \
         state and the injected event",
        [ENTRY_INTR_INFO, GUEST_RFLAGS, GUEST_ACTIVITY_STATE, GUEST_INTERRUPTIBILITY];
    GUEST_PENDING_DEBUG, GuestState, None,
        "pending debug exception reserved bits are clear", [GUEST_PENDING_DBG];
    GUEST_LINK_POINTER, GuestState, None,
        "the VMCS link pointer is all ones", [GUEST_LINK_POINTER];
    GUEST_VGIF_STATE, GuestState, Some(Feat::VirtualGif),
        "virtual-GIF state reserved bits are clear", [GUEST_VGIF_STATE];
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl CheckId {
    /// Whether the check is evaluated under a profile with these features.
    pub fn enabled_for(self, profile: &crate::capability::CapabilityProfile) -> bool {
        self.gate().is_none_or(|f| profile.has(f))
    }

    /// JSON dump of the whole catalog.
    pub fn catalog_json() -> serde_json::Value {
        serde_json::Value::Array(
            Self::ALL
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "id": c.name(),
                        "group": c.group(),
                        "gate": c.gate().map(|f| f.to_string()),
                        "description": c.description(),
                        "fields": c.fields().iter().map(|f| f.name()).collect::<Vec<_>>(),
                    })
                })
                .collect(),
        )
    }
}

/// Checks enabled under `profile`, in evaluation order.
pub fn enabled_checks(profile: &crate::capability::CapabilityProfile) -> Vec<CheckId> {
    CheckId::ALL.iter().copied().filter(|c| c.enabled_for(profile)).collect()
}

#[allow(dead_code)]
const _AR_FIELDS_SORTED: [FieldId; 8] = ALL_AR;
