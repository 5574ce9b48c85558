// SPDX-License-Identifier: Apache-2.0

//! Routing of L2 exits: handled by L0 or reflected to L1.

use super::{cov, BugId, Oracle};
use crate::capability::bits;
use crate::checks::arch;
use crate::harness::TriggerKind;
use crate::state::field as f;

/// MSRs an L2 guest may touch through RDMSR/WRMSR, indexed by the low five
/// bits of the trigger index.
const GUEST_MSRS: [u32; 32] = [
    0x10, 0x1B, 0x3A, 0x48, 0x49, 0x8B, 0xC1, 0xE7,
    0xE8, 0x174, 0x175, 0x176, 0x1D9, 0x277, 0x480, 0x48D,
    0x6E0, 0x802, 0x808, 0x80B, 0xC000_0080, 0xC000_0081, 0xC000_0082, 0xC000_0083,
    0xC000_0084, 0xC000_0100, 0xC000_0101, 0xC000_0102, 0xC000_0103, 0x4B56_4D00, 0x4B56_4D01, 0x4000_0000,
];

fn canon(v: u64) -> bool {
    (((v << 16) as i64) >> 16) as u64 == v
}

/// Stand-in for a bitmap page lookup: a deterministic bit derived from the
/// bitmap address and the index being tested.
fn bitmap_bit(page: u64, index: u64) -> bool {
    let x = (page ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    (x >> 61) & 1 == 1
}

impl Oracle {
    pub(super) fn route_exit(&mut self, kind: TriggerKind, index: u8, operand: u64) -> Result<bool, (BugId, String)> {
        let s = &self.vmcs12;
        let proc = s.get(f::PROC_CONTROLS);
        let sec = if proc & bits::proc::ACTIVATE_SECONDARY as u64 != 0 { s.get(f::PROC2_CONTROLS) } else { 0 };
        let on = |bit: u32| proc & bit as u64 != 0;
        let on2 = |bit: u32| sec & bit as u64 != 0;

        let reflected = match kind {
            TriggerKind::ControlRegisterAccess => {
                let cr = [0u32, 3, 4, 8][(index & 3) as usize];
                let write = index & 4 != 0;
                let r = match (cr, write) {
                    (0, true) | (4, true) => {
                        let (mask, shadow) = if cr == 0 {
                            (s.get(f::CR0_GUEST_HOST_MASK), s.get(f::CR0_READ_SHADOW))
                        } else {
                            (s.get(f::CR4_GUEST_HOST_MASK), s.get(f::CR4_READ_SHADOW))
                        };
                        let owned = (operand ^ shadow) & mask;
                        if owned != 0 {
                            cov!(self, "cr_owned_bit", cr << 8 | owned.trailing_zeros());
                        }
                        owned != 0
                    }
                    (0, false) | (4, false) => false,
                    (3, true) => {
                        let targets = s.get(f::CR3_TARGET_COUNT);
                        let hit = targets >= 1 && s.get(f::CR3_TARGET_0) == operand;
                        cov!(self, "cr3_target", hit as u32);
                        on(bits::proc::CR3_LOAD_EXITING) && !hit
                    }
                    (3, false) => on(bits::proc::CR3_STORE_EXITING),
                    (_, true) => on(bits::proc::CR8_LOAD_EXITING),
                    (_, false) => on(bits::proc::CR8_STORE_EXITING),
                };
                cov!(self, "exit_cr", cr << 2 | (write as u32) << 1 | r as u32);
                r
            }
            TriggerKind::DebugRegisterAccess => {
                let r = on(bits::proc::MOV_DR_EXITING);
                cov!(self, "exit_dr", (index as u32 & 7) << 1 | r as u32);
                r
            }
            TriggerKind::IoPort => {
                let port = operand & 0xFFFF;
                let r = if on(bits::proc::UNCOND_IO_EXITING) {
                    true
                } else if on(bits::proc::USE_IO_BITMAPS) {
                    let page = if port < 0x8000 { s.get(f::IO_BITMAP_A) } else { s.get(f::IO_BITMAP_B) };
                    cov!(self, "io_bitmap", (port >> 15) as u32);
                    bitmap_bit(page, port)
                } else {
                    false
                };
                cov!(self, "exit_io", (index as u32 & 1) << 1 | r as u32);
                r
            }
            TriggerKind::MsrRead | TriggerKind::MsrWrite => {
                let write = kind == TriggerKind::MsrWrite;
                let slot = (index & 31) as usize;
                let msr = GUEST_MSRS[slot];
                let r = !on(bits::proc::USE_MSR_BITMAPS)
                    || bitmap_bit(s.get(f::MSR_BITMAP), (msr as u64) << 1 | write as u64);
                cov!(self, "exit_msr", (slot as u32) << 2 | (write as u32) << 1 | r as u32);
                if write && !r && arch::msr_holds_address(msr) && !canon(operand) {
                    if self.bug(BugId::B2_NonCanonicalMsrLoad) {
                        let msg = format!("general protection fault, probably for non-canonical address {operand:#x}");
                        return Err((BugId::B2_NonCanonicalMsrLoad, msg));
                    }
                    cov!(self, "msr_inject_gp", slot as u32);
                }
                r
            }
            TriggerKind::CpuId => {
                cov!(self, "exit_cpuid", (operand & 0xF) as u32);
                true
            }
            TriggerKind::VmxInstruction => {
                cov!(self, "exit_vmx", index as u32 & 7);
                true
            }
            TriggerKind::Halt => {
                let r = on(bits::proc::HLT_EXITING);
                cov!(self, "exit_hlt", r as u32);
                r
            }
            TriggerKind::ReadTsc => {
                let r = on(bits::proc::RDTSC_EXITING);
                cov!(self, "exit_rdtsc", r as u32);
                r
            }
            TriggerKind::Pause => {
                let ple = on2(bits::proc2::PAUSE_LOOP_EXITING);
                let r = on(bits::proc::PAUSE_EXITING) || (ple && index & 1 == 1);
                cov!(self, "exit_pause", (ple as u32) << 1 | r as u32);
                r
            }
            TriggerKind::RdRand => {
                let r = on2(bits::proc2::RDRAND_EXITING);
                cov!(self, "exit_rdrand", r as u32);
                r
            }
        };
        Ok(reflected)
    }
}
