// SPDX-License-Identifier: Apache-2.0

//! vCPU feature configuration and the capability masks derived from it.
//!
//! A profile is a 24-bit feature array read straight from fuzz input. After the
//! dependency closure is applied, every surviving feature unlocks one or more
//! bits in the allowed-1 mask of a capability register; the allowed-0 masks
//! (must-be-1 bits) are fixed by the modeled CPU.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result};

pub const FEATURE_COUNT: usize = 24;
pub const DEFAULT_PHYS_ADDR_WIDTH: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum FeatureId {
    NestedPaging = 0,
    UnrestrictedGuest = 1,
    VirtualProcessorId = 2,
    SecondaryControls = 3,
    VirtualNmi = 4,
    LongModeSupport = 5,
    ActivityStateHlt = 6,
    ActivityStateShutdown = 7,
    ActivityStateWaitForSipi = 8,
    MsrBitmaps = 9,
    IoBitmaps = 10,
    PostedInterrupts = 11,
    PreemptionTimer = 12,
    TprShadow = 13,
    RdrandExiting = 14,
    VirtualGif = 15,
    LoadEfer = 16,
    LoadPat = 17,
    MonitorTrapFlag = 18,
    PauseLoopExiting = 19,
    Reserved20 = 20,
    Reserved21 = 21,
    Reserved22 = 22,
    Reserved23 = 23,
}

impl FeatureId {
    pub const ALL: [FeatureId; FEATURE_COUNT] = [
        Self::NestedPaging,
        Self::UnrestrictedGuest,
        Self::VirtualProcessorId,
        Self::SecondaryControls,
        Self::VirtualNmi,
        Self::LongModeSupport,
        Self::ActivityStateHlt,
        Self::ActivityStateShutdown,
        Self::ActivityStateWaitForSipi,
        Self::MsrBitmaps,
        Self::IoBitmaps,
        Self::PostedInterrupts,
        Self::PreemptionTimer,
        Self::TprShadow,
        Self::RdrandExiting,
        Self::VirtualGif,
        Self::LoadEfer,
        Self::LoadPat,
        Self::MonitorTrapFlag,
        Self::PauseLoopExiting,
        Self::Reserved20,
        Self::Reserved21,
        Self::Reserved22,
        Self::Reserved23,
    ];

    pub const fn ordinal(self) -> u32 {
        self as u32
    }

    pub const fn bit(self) -> u32 {
        1 << self as u32
    }

    pub fn is_reserved(self) -> bool {
        self.ordinal() >= 20
    }

    /// Features that must be on for this one to survive the closure.
    pub fn prerequisites(self) -> &'static [FeatureId] {
        match self {
            Self::UnrestrictedGuest => &[Self::NestedPaging],
            Self::VirtualProcessorId | Self::PostedInterrupts => &[Self::SecondaryControls],
            _ => &[],
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Features the modeled CPU cannot turn off.
pub const ALWAYS_ON: u32 = FeatureId::LongModeSupport.bit();
const RESERVED_FEATURES: u32 = 0xF0_0000;
const ALL_FEATURES: u32 = (1 << FEATURE_COUNT) - 1;

/// Capability registers carrying allowed-0 / allowed-1 masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CapReg {
    Pin,
    Proc,
    Proc2,
    Exit,
    Entry,
    Misc,
}

impl CapReg {
    pub const ALL: [CapReg; 6] = [Self::Pin, Self::Proc, Self::Proc2, Self::Exit, Self::Entry, Self::Misc];
}

/// Control bit layouts shared by the validator, the oracle and the harness.
pub mod bits {
    pub mod pin {
        pub const EXT_INT_EXITING: u32 = 1 << 0;
        pub const NMI_EXITING: u32 = 1 << 3;
        pub const VIRTUAL_NMIS: u32 = 1 << 5;
        pub const PREEMPTION_TIMER: u32 = 1 << 6;
        pub const POSTED_INTERRUPTS: u32 = 1 << 7;
        pub const DEFAULT1: u32 = 0x16;
    }
    pub mod proc {
        pub const INT_WINDOW: u32 = 1 << 2;
        pub const TSC_OFFSETTING: u32 = 1 << 3;
        pub const HLT_EXITING: u32 = 1 << 7;
        pub const INVLPG_EXITING: u32 = 1 << 9;
        pub const MWAIT_EXITING: u32 = 1 << 10;
        pub const RDPMC_EXITING: u32 = 1 << 11;
        pub const RDTSC_EXITING: u32 = 1 << 12;
        pub const CR3_LOAD_EXITING: u32 = 1 << 15;
        pub const CR3_STORE_EXITING: u32 = 1 << 16;
        pub const CR8_LOAD_EXITING: u32 = 1 << 19;
        pub const CR8_STORE_EXITING: u32 = 1 << 20;
        pub const TPR_SHADOW: u32 = 1 << 21;
        pub const NMI_WINDOW: u32 = 1 << 22;
        pub const MOV_DR_EXITING: u32 = 1 << 23;
        pub const UNCOND_IO_EXITING: u32 = 1 << 24;
        pub const USE_IO_BITMAPS: u32 = 1 << 25;
        pub const MONITOR_TRAP_FLAG: u32 = 1 << 27;
        pub const USE_MSR_BITMAPS: u32 = 1 << 28;
        pub const MONITOR_EXITING: u32 = 1 << 29;
        pub const PAUSE_EXITING: u32 = 1 << 30;
        pub const ACTIVATE_SECONDARY: u32 = 1 << 31;
        pub const DEFAULT1: u32 = 0x0401_E172;
    }
    pub mod proc2 {
        pub const VIRT_APIC_ACCESS: u32 = 1 << 0;
        pub const ENABLE_EPT: u32 = 1 << 1;
        pub const DESC_TABLE_EXITING: u32 = 1 << 2;
        pub const RDTSCP: u32 = 1 << 3;
        pub const VIRT_X2APIC: u32 = 1 << 4;
        pub const ENABLE_VPID: u32 = 1 << 5;
        pub const WBINVD_EXITING: u32 = 1 << 6;
        pub const UNRESTRICTED_GUEST: u32 = 1 << 7;
        pub const PAUSE_LOOP_EXITING: u32 = 1 << 10;
        pub const RDRAND_EXITING: u32 = 1 << 11;
    }
    pub mod exit {
        pub const HOST_ADDR_SPACE_SIZE: u32 = 1 << 9;
        pub const ACK_INT_ON_EXIT: u32 = 1 << 15;
        pub const SAVE_PAT: u32 = 1 << 18;
        pub const LOAD_PAT: u32 = 1 << 19;
        pub const SAVE_EFER: u32 = 1 << 20;
        pub const LOAD_EFER: u32 = 1 << 21;
        pub const SAVE_PREEMPTION_TIMER: u32 = 1 << 22;
        pub const DEFAULT1: u32 = 0x0003_6DFF;
    }
    pub mod entry {
        pub const IA32E_MODE_GUEST: u32 = 1 << 9;
        pub const ENTRY_TO_SMM: u32 = 1 << 10;
        pub const DEACTIVATE_DUAL_MONITOR: u32 = 1 << 11;
        pub const LOAD_PAT: u32 = 1 << 14;
        pub const LOAD_EFER: u32 = 1 << 15;
        pub const DEFAULT1: u32 = 0x11FF;
    }
    pub mod misc {
        pub const ACTIVITY_HLT: u32 = 1 << 6;
        pub const ACTIVITY_SHUTDOWN: u32 = 1 << 7;
        pub const ACTIVITY_WAIT_SIPI: u32 = 1 << 8;
        pub const VGIF: u32 = 1 << 20;
    }
}

/// Allowed-1 bits available whatever the feature array says.
const fn base_allowed1(reg: CapReg) -> u32 {
    use bits::*;
    match reg {
        CapReg::Pin => pin::DEFAULT1 | pin::EXT_INT_EXITING | pin::NMI_EXITING,
        CapReg::Proc => {
            proc::DEFAULT1
                | proc::INT_WINDOW
                | proc::TSC_OFFSETTING
                | proc::HLT_EXITING
                | proc::INVLPG_EXITING
                | proc::MWAIT_EXITING
                | proc::RDPMC_EXITING
                | proc::RDTSC_EXITING
                | proc::CR8_LOAD_EXITING
                | proc::CR8_STORE_EXITING
                | proc::NMI_WINDOW
                | proc::MOV_DR_EXITING
                | proc::UNCOND_IO_EXITING
                | proc::MONITOR_EXITING
                | proc::PAUSE_EXITING
        }
        CapReg::Proc2 => {
            proc2::VIRT_APIC_ACCESS
                | proc2::DESC_TABLE_EXITING
                | proc2::RDTSCP
                | proc2::VIRT_X2APIC
                | proc2::WBINVD_EXITING
        }
        CapReg::Exit => exit::DEFAULT1 | exit::ACK_INT_ON_EXIT,
        CapReg::Entry => entry::DEFAULT1,
        CapReg::Misc => 0,
    }
}

/// Capability bits unlocked by one feature.
pub fn feature_caps(feature: FeatureId) -> &'static [(CapReg, u32)] {
    use bits::*;
    use FeatureId::*;
    match feature {
        NestedPaging => &[(CapReg::Proc2, proc2::ENABLE_EPT)],
        UnrestrictedGuest => &[(CapReg::Proc2, proc2::UNRESTRICTED_GUEST)],
        VirtualProcessorId => &[(CapReg::Proc2, proc2::ENABLE_VPID)],
        SecondaryControls => &[(CapReg::Proc, proc::ACTIVATE_SECONDARY)],
        VirtualNmi => &[(CapReg::Pin, pin::VIRTUAL_NMIS)],
        LongModeSupport => &[
            (CapReg::Exit, exit::HOST_ADDR_SPACE_SIZE),
            (CapReg::Entry, entry::IA32E_MODE_GUEST),
        ],
        ActivityStateHlt => &[(CapReg::Misc, misc::ACTIVITY_HLT)],
        ActivityStateShutdown => &[(CapReg::Misc, misc::ACTIVITY_SHUTDOWN)],
        ActivityStateWaitForSipi => &[(CapReg::Misc, misc::ACTIVITY_WAIT_SIPI)],
        MsrBitmaps => &[(CapReg::Proc, proc::USE_MSR_BITMAPS)],
        IoBitmaps => &[(CapReg::Proc, proc::USE_IO_BITMAPS)],
        PostedInterrupts => &[(CapReg::Pin, pin::POSTED_INTERRUPTS)],
        PreemptionTimer => &[
            (CapReg::Pin, pin::PREEMPTION_TIMER),
            (CapReg::Exit, exit::SAVE_PREEMPTION_TIMER),
        ],
        TprShadow => &[(CapReg::Proc, proc::TPR_SHADOW)],
        RdrandExiting => &[(CapReg::Proc2, proc2::RDRAND_EXITING)],
        VirtualGif => &[(CapReg::Misc, misc::VGIF)],
        LoadEfer => &[
            (CapReg::Exit, exit::SAVE_EFER | exit::LOAD_EFER),
            (CapReg::Entry, entry::LOAD_EFER),
        ],
        LoadPat => &[
            (CapReg::Exit, exit::SAVE_PAT | exit::LOAD_PAT),
            (CapReg::Entry, entry::LOAD_PAT),
        ],
        MonitorTrapFlag => &[(CapReg::Proc, proc::MONITOR_TRAP_FLAG)],
        PauseLoopExiting => &[(CapReg::Proc2, proc2::PAUSE_LOOP_EXITING)],
        Reserved20 | Reserved21 | Reserved22 | Reserved23 => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CapMasks {
    /// Bits that must be 1.
    pub allowed0: u32,
    /// Bits that may be 1.
    pub allowed1: u32,
}

impl CapMasks {
    pub fn admits(&self, value: u64) -> bool {
        let v = value as u32;
        value >> 32 == 0 && v & self.allowed0 == self.allowed0 && v & !self.allowed1 == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CapabilityProfile {
    feature_bits: u32,
    masks: [CapMasks; 6],
    pub phys_addr_width: u32,
}

/// Applies the dependency closure: reserved slots cleared, always-on features
/// set, and any feature whose prerequisite is off is turned off.
pub fn dependency_closure(bits: u32) -> u32 {
    let mut out = (bits & ALL_FEATURES & !RESERVED_FEATURES) | ALWAYS_ON;
    // Prerequisites are never dependents themselves, so one sweep settles it.
    for f in FeatureId::ALL {
        if f.prerequisites().iter().any(|p| out & p.bit() == 0) {
            out &= !f.bit();
        }
    }
    out
}

impl CapabilityProfile {
    pub fn from_feature_bits(bits: u32) -> Self {
        let feature_bits = dependency_closure(bits);
        let mut masks = CapReg::ALL.map(|reg| CapMasks { allowed0: 0, allowed1: base_allowed1(reg) });
        masks[CapReg::Pin as usize].allowed0 = bits::pin::DEFAULT1;
        masks[CapReg::Proc as usize].allowed0 = bits::proc::DEFAULT1;
        masks[CapReg::Exit as usize].allowed0 = bits::exit::DEFAULT1;
        masks[CapReg::Entry as usize].allowed0 = bits::entry::DEFAULT1;
        for f in FeatureId::ALL {
            if feature_bits & f.bit() != 0 {
                for &(reg, b) in feature_caps(f) {
                    masks[reg as usize].allowed1 |= b;
                }
            }
        }
        Self { feature_bits, masks, phys_addr_width: DEFAULT_PHYS_ADDR_WIDTH }
    }

    /// Only always-on features.
    pub fn minimal() -> Self {
        Self::from_feature_bits(0)
    }

    /// Every non-reserved feature.
    pub fn full() -> Self {
        Self::from_feature_bits(ALL_FEATURES)
    }

    /// Static configuration used when the configurator is switched off: a
    /// typical nested setup without VGIF and without the TXT-style activity states.
    pub fn default_static() -> Self {
        use FeatureId::*;
        let off = [ActivityStateShutdown, ActivityStateWaitForSipi, VirtualGif];
        let bits = off.iter().fold(ALL_FEATURES, |acc, f| acc & !f.bit());
        Self::from_feature_bits(bits)
    }

    pub fn feature_bits(&self) -> u32 {
        self.feature_bits
    }

    pub fn has(&self, f: FeatureId) -> bool {
        self.feature_bits & f.bit() != 0
    }

    pub fn features(&self) -> Vec<FeatureId> {
        FeatureId::ALL.into_iter().filter(|&f| self.has(f)).collect()
    }

    pub fn masks(&self, reg: CapReg) -> CapMasks {
        self.masks[reg as usize]
    }

    pub fn all_masks(&self) -> &[CapMasks; 6] {
        &self.masks
    }

    pub fn phys_mask(&self) -> u64 {
        (1u64 << self.phys_addr_width) - 1
    }

    /// Supported activity states (0 = active is always supported).
    pub fn activity_supported(&self, state: u64) -> bool {
        match state {
            0 => true,
            1 => self.has(FeatureId::ActivityStateHlt),
            2 => self.has(FeatureId::ActivityStateShutdown),
            3 => self.has(FeatureId::ActivityStateWaitForSipi),
            _ => false,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "feature_bits": format!("{:#08x}", self.feature_bits),
            "features": self.features().iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            "phys_addr_width": self.phys_addr_width,
            "masks": CapReg::ALL.iter().map(|r| {
                let m = self.masks(*r);
                serde_json::json!({
                    "register": format!("{r:?}"),
                    "allowed0": format!("{:#010x}", m.allowed0),
                    "allowed1": format!("{:#010x}", m.allowed1),
                })
            }).collect::<Vec<_>>(),
        })
    }
}

impl fmt::Display for CapabilityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.features().iter().map(|f| f.to_string()).collect();
        write!(f, "[{}] (phys {} bits)", names.join(", "), self.phys_addr_width)
    }
}

/// Reads one feature bit per input bit from the first three bytes.
pub fn generate_profile(input: &[u8]) -> Result<CapabilityProfile> {
    ensure_len("vcpu-config", input, 3)?;
    let bits = u32::from_le_bytes([input[0], input[1], input[2], 0]);
    Ok(CapabilityProfile::from_feature_bits(bits))
}
