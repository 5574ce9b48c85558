// SPDX-License-Identifier: Apache-2.0

//! Nested VM-entry: the oracle's own consistency checks, the MSR-load step and
//! VMCS12 to VMCS02 translation.

use super::{cov, BugId, EntryStatus, Fail, Oracle, RejectReason};
use crate::capability::{bits, CapReg, FeatureId};
use crate::checks::{arch, CheckId, Segment};
use crate::state::{field as f, FieldId, VmState, FIELD_COUNT, FIRST_RESERVED};

type Verdict = std::result::Result<(), Fail>;

fn canon(v: u64) -> bool {
    (((v << 16) as i64) >> 16) as u64 == v
}

fn low32(v: u64) -> bool {
    v <= u32::MAX as u64
}

pub(super) fn ia32e(s: &VmState) -> bool {
    s.get(f::ENTRY_CONTROLS) >> 9 & 1 == 1
}

/// Read-only view with named accessors.
struct V<'a>(&'a VmState);

impl V<'_> {
    fn pin(&self) -> u64 {
        self.0.get(f::PIN_CONTROLS)
    }
    fn proc(&self) -> u64 {
        self.0.get(f::PROC_CONTROLS)
    }
    fn sec(&self) -> u64 {
        if self.proc() & bits::proc::ACTIVATE_SECONDARY as u64 != 0 {
            self.0.get(f::PROC2_CONTROLS)
        } else {
            0
        }
    }
    fn exit(&self) -> u64 {
        self.0.get(f::EXIT_CONTROLS)
    }
    fn entry(&self) -> u64 {
        self.0.get(f::ENTRY_CONTROLS)
    }
    fn host64(&self) -> bool {
        self.exit() & bits::exit::HOST_ADDR_SPACE_SIZE as u64 != 0
    }
    fn long_guest(&self) -> bool {
        ia32e(self.0)
    }
    fn cr0(&self) -> u64 {
        self.0.get(f::GUEST_CR0)
    }
    fn cr4(&self) -> u64 {
        self.0.get(f::GUEST_CR4)
    }
    fn efer(&self) -> u64 {
        self.0.get(f::GUEST_EFER)
    }
    fn ar(&self, seg: Segment) -> u64 {
        self.0.get(seg.access_rights())
    }
    fn unusable(&self, seg: Segment) -> bool {
        self.ar(seg) >> 16 & 1 == 1
    }
    /// (type, vector) of a valid injected event.
    fn event(&self) -> Option<(u64, u64)> {
        let info = self.0.get(f::ENTRY_INTR_INFO);
        if info >> 31 == 1 {
            Some((info >> 8 & 7, info & 0xFF))
        } else {
            None
        }
    }
}

fn pat_entries_valid(pat: u64) -> bool {
    pat.to_le_bytes().iter().all(|&b| matches!(b, 0 | 1 | 4 | 5 | 6 | 7))
}

impl Oracle {
    fn verdict(&mut self, id: CheckId, ok: bool) -> Verdict {
        let site = id as u64 + 1;
        self.path_hash = (self.path_hash ^ site).wrapping_mul(0x0000_0100_0000_01B3);
        cov!(self, "check", (id as u32) << 1 | ok as u32);
        if ok {
            Ok(())
        } else {
            Err(Fail::Reject(id))
        }
    }

    fn has_feature(&self, feat: FeatureId) -> bool {
        self.config.profile.has(feat)
    }

    fn below_width(&self, addr: u64) -> bool {
        addr >> self.config.profile.phys_addr_width == 0
    }

    fn addr_ok(&self, addr: u64, align: u64) -> bool {
        addr.is_multiple_of(align) && self.below_width(addr)
    }

    fn caps_ok(&mut self, reg: CapReg, value: u64) -> bool {
        let m = self.config.profile.masks(reg);
        let must = m.allowed0 as u64;
        let may = m.allowed1 as u64;
        let bad = (value & !may) | (must & !value);
        if bad != 0 {
            cov!(self, "caps_bad_bit", (reg as u32) << 8 | bad.trailing_zeros());
        }
        bad == 0
    }

    fn controls(&mut self, s: &VmState) -> Verdict {
        let v = V(s);
        let paw_ok = |o: &Self, a: u64, al: u64| o.addr_ok(a, al);

        let ok = self.caps_ok(CapReg::Pin, v.pin());
        self.verdict(CheckId::PIN_CONTROLS_RESERVED, ok)?;
        let ok = self.caps_ok(CapReg::Proc, v.proc());
        self.verdict(CheckId::PROC_CONTROLS_RESERVED, ok)?;
        let activated = v.proc() >> 31 == 1;
        self.verdict(CheckId::SECONDARY_ACTIVATION, activated || s.get(f::PROC2_CONTROLS) == 0)?;
        let ok = !activated || self.caps_ok(CapReg::Proc2, s.get(f::PROC2_CONTROLS));
        self.verdict(CheckId::PROC2_CONTROLS_RESERVED, ok)?;
        let ok = self.caps_ok(CapReg::Exit, v.exit());
        self.verdict(CheckId::EXIT_CONTROLS_RESERVED, ok)?;
        let ok = self.caps_ok(CapReg::Entry, v.entry());
        self.verdict(CheckId::ENTRY_CONTROLS_RESERVED, ok)?;
        self.verdict(CheckId::HOST_ADDR_SPACE_IA32E, !v.long_guest() || v.host64())?;

        let sec = v.sec();
        let ept = sec & bits::proc2::ENABLE_EPT as u64 != 0;
        if self.has_feature(FeatureId::UnrestrictedGuest) {
            let ug = sec & bits::proc2::UNRESTRICTED_GUEST as u64 != 0;
            self.verdict(CheckId::UNRESTRICTED_GUEST_REQUIRES_EPT, !ug || ept)?;
        }
        if self.has_feature(FeatureId::VirtualProcessorId) {
            let vpid_on = sec & bits::proc2::ENABLE_VPID as u64 != 0;
            self.verdict(CheckId::VPID_NONZERO, !vpid_on || s.get(f::VPID) != 0)?;
        }
        if self.has_feature(FeatureId::NestedPaging) && ept {
            let eptp = s.get(f::EPT_POINTER);
            let mt = eptp & 7;
            let walk = eptp >> 3 & 7;
            let good = (mt == 0 || mt == 6) && walk == 3 && eptp >> 7 & 0x1F == 0 && self.below_width(eptp);
            cov!(self, "eptp_shape", (mt << 3 | walk) as u32);
            if !good && self.bug(BugId::B3_InvalidEptpTripleFault) {
                let msg = format!("Assertion failed: triple fault on nested entry (eptp {eptp:#x}, mt {mt}, walk {walk})");
                return Err(Fail::Crash(BugId::B3_InvalidEptpTripleFault, msg));
            }
            self.verdict(CheckId::EPTP_VALID, good)?;
        }
        if self.has_feature(FeatureId::IoBitmaps) {
            let on = v.proc() & bits::proc::USE_IO_BITMAPS as u64 != 0;
            let ok = !on || (paw_ok(self, s.get(f::IO_BITMAP_A), 4096) && paw_ok(self, s.get(f::IO_BITMAP_B), 4096));
            self.verdict(CheckId::IO_BITMAP_ADDRS, ok)?;
        }
        if self.has_feature(FeatureId::MsrBitmaps) {
            let on = v.proc() & bits::proc::USE_MSR_BITMAPS as u64 != 0;
            let ok = !on || paw_ok(self, s.get(f::MSR_BITMAP), 4096);
            self.verdict(CheckId::MSR_BITMAP_ADDR, ok)?;
        }
        if self.has_feature(FeatureId::TprShadow) {
            let on = v.proc() & bits::proc::TPR_SHADOW as u64 != 0;
            let ok = !on || (paw_ok(self, s.get(f::VIRTUAL_APIC_ADDR), 4096) && s.get(f::TPR_THRESHOLD) >> 4 == 0);
            self.verdict(CheckId::TPR_SHADOW_CONFIG, ok)?;
        }
        if self.has_feature(FeatureId::PostedInterrupts) {
            let on = v.pin() & bits::pin::POSTED_INTERRUPTS as u64 != 0;
            let ok = !on || (s.get(f::POSTED_INTR_NV) >> 8 == 0 && paw_ok(self, s.get(f::POSTED_INTR_DESC), 64));
            self.verdict(CheckId::POSTED_INTERRUPT_CONFIG, ok)?;
        }
        self.verdict(CheckId::CR3_TARGET_COUNT_RANGE, s.get(f::CR3_TARGET_COUNT) < 5)?;
        let mut areas_ok = true;
        for (count, addr) in [(f::EXIT_MSR_STORE_COUNT, f::EXIT_MSR_STORE_ADDR), (f::EXIT_MSR_LOAD_COUNT, f::EXIT_MSR_LOAD_ADDR)] {
            let n = s.get(count);
            areas_ok &= n < 5 && (n == 0 || paw_ok(self, s.get(addr), 16));
        }
        self.verdict(CheckId::EXIT_MSR_AREAS, areas_ok)?;
        let n = s.get(f::ENTRY_MSR_LOAD_COUNT);
        self.verdict(CheckId::MSRLOAD_COUNT, n < 5)?;
        let ok = n == 0 || paw_ok(self, s.get(f::ENTRY_MSR_LOAD_ADDR), 16);
        self.verdict(CheckId::MSRLOAD_AREA_ADDR, ok)?;
        let slots = n as usize;
        let mut idx_ok = true;
        for i in 0..slots {
            let idx = s.get(crate::checks::MSR_LOAD_INDEX[i]);
            idx_ok &= arch::LOADABLE_MSRS.iter().any(|&m| m as u64 == idx);
        }
        self.verdict(CheckId::MSRLOAD_INDEX_VALID, idx_ok)?;
        if !self.bug(BugId::B2_NonCanonicalMsrLoad) {
            let mut canon_ok = true;
            for i in 0..slots {
                let idx = s.get(crate::checks::MSR_LOAD_INDEX[i]) as u32;
                if arch::msr_holds_address(idx) {
                    canon_ok &= canon(s.get(crate::checks::MSR_LOAD_VALUE[i]));
                }
            }
            self.verdict(CheckId::MSRLOAD_CANONICAL, canon_ok)?;
        }
        let info = s.get(f::ENTRY_INTR_INFO);
        let mut ev_ok = true;
        if info >> 31 == 1 {
            let ty = info >> 8 & 7;
            let vec = info & 0xFF;
            cov!(self, "inject", (ty << 1 | (vec < 32) as u64) as u32);
            ev_ok = info >> 12 & 0x7FFFF == 0
                && ty != 1
                && (ty != 2 || vec == 2)
                && (ty != 3 || vec < 32)
                && (info >> 11 & 1 == 0 || s.get(f::ENTRY_EXCEPTION_ERROR_CODE) >> 16 == 0);
        }
        self.verdict(CheckId::ENTRY_EVENT_INJECTION, ev_ok)
    }

    fn host_state(&mut self, s: &VmState) -> Verdict {
        let v = V(s);
        let cr0 = s.get(f::HOST_CR0);
        let cr4 = s.get(f::HOST_CR4);
        self.verdict(CheckId::HOST_CR0_FIXED, cr0 | arch::CR0_VALID == arch::CR0_VALID && cr0 >> 5 & 1 == 1)?;
        self.verdict(CheckId::HOST_CR0_PG_PE, cr0 >> 31 & 1 <= cr0 & 1)?;
        self.verdict(CheckId::HOST_CR4_FIXED, cr4 | arch::CR4_VALID == arch::CR4_VALID && cr4 >> 13 & 1 == 1)?;
        let ok = self.below_width(s.get(f::HOST_CR3));
        self.verdict(CheckId::HOST_CR3_WIDTH, ok)?;
        let host64 = v.host64();
        cov!(self, "host_mode", host64 as u32);
        let ok = if host64 { cr4 >> 5 & 1 == 1 } else { cr4 >> 17 & 1 == 0 };
        self.verdict(CheckId::HOST_ADDR_SPACE_CR4, ok)?;
        let efer = s.get(f::HOST_EFER);
        let long = host64 as u64;
        let ok = efer | arch::EFER_VALID == arch::EFER_VALID && efer >> 10 & 1 == long && efer >> 8 & 1 == long;
        self.verdict(CheckId::HOST_EFER, ok)?;
        let rip = s.get(f::HOST_RIP);
        self.verdict(CheckId::HOST_RIP, if host64 { canon(rip) } else { low32(rip) })?;
        let sel_ok = crate::checks::HOST_SELECTORS.iter().all(|&sel| s.get(sel).is_multiple_of(8));
        self.verdict(CheckId::HOST_SELECTOR_RPL_TI, sel_ok)?;
        let ok = s.get(f::HOST_CS_SELECTOR) > 0 && s.get(f::HOST_TR_SELECTOR) > 0 && (host64 || s.get(f::HOST_SS_SELECTOR) > 0);
        self.verdict(CheckId::HOST_CS_TR_NONZERO, ok)?;
        let ok = crate::checks::HOST_CANONICAL.iter().all(|&b| canon(s.get(b)));
        self.verdict(CheckId::HOST_CANONICAL_BASES, ok)?;
        if self.has_feature(FeatureId::LoadPat) {
            let on = v.exit() & bits::exit::LOAD_PAT as u64 != 0;
            self.verdict(CheckId::HOST_PAT_VALID, !on || pat_entries_valid(s.get(f::HOST_PAT)))?;
        }
        Ok(())
    }

    fn segments(&mut self, s: &VmState) -> Verdict {
        let v = V(s);
        let long = v.long_guest();
        let ok = Segment::ALL.iter().all(|&seg| v.ar(seg) & 0xFFFE_0F00 == 0);
        self.verdict(CheckId::GUEST_SEGMENT_AR_RESERVED, ok)?;
        self.verdict(CheckId::GUEST_SEGMENT_USABLE, !v.unusable(Segment::Cs) && !v.unusable(Segment::Tr))?;

        let mut types_ok = true;
        for seg in [Segment::Es, Segment::Cs, Segment::Ss, Segment::Ds, Segment::Fs, Segment::Gs] {
            if v.unusable(seg) {
                continue;
            }
            let ar = v.ar(seg);
            let ty = ar & 0xF;
            cov!(self, "seg_type", (seg as u64) << 4 | ty);
            let code = ty & 8 != 0;
            let type_ok = match seg {
                Segment::Cs => code && ty & 1 == 1,
                Segment::Ss => ty == 3 || ty == 7,
                _ => ty & 1 == 1 && (!code || ty & 2 == 2),
            };
            types_ok &= type_ok && ar >> 4 & 1 == 1 && ar >> 7 & 1 == 1;
        }
        self.verdict(CheckId::GUEST_SEGMENT_TYPE, types_ok)?;

        let mut gran_ok = true;
        for seg in Segment::ALL {
            if v.unusable(seg) {
                continue;
            }
            let limit = s.get(seg.limit());
            let g = v.ar(seg) >> 15 & 1 == 1;
            cov!(self, "seg_gran", (seg as u32) << 1 | g as u32);
            gran_ok &= if g { limit % 4096 == 4095 } else { limit < 1 << 20 };
        }
        self.verdict(CheckId::GUEST_SEGMENT_GRANULARITY, gran_ok)?;

        let ok = v.unusable(Segment::Ss) || v.ar(Segment::Ss) >> 5 & 3 == s.get(f::GUEST_SS_SELECTOR) & 3;
        self.verdict(CheckId::GUEST_SS_DPL, ok)?;
        let cs = v.ar(Segment::Cs);
        cov!(self, "cs_mode", (long as u64) << 2 | (cs >> 13 & 3));
        self.verdict(CheckId::GUEST_CS_LONG_MODE, !(long && cs >> 13 & 1 == 1 && cs >> 14 & 1 == 1))?;

        let tr = v.ar(Segment::Tr);
        let tr_ty = tr & 0xF;
        let ty_ok = if long { tr_ty == 11 } else { tr_ty == 3 || tr_ty == 11 };
        let ok = ty_ok && tr & 0x10 == 0 && tr & 0x80 != 0 && s.get(f::GUEST_TR_SELECTOR) & 4 == 0;
        self.verdict(CheckId::GUEST_TR_BUSY_TSS, ok)?;
        let ldtr = v.ar(Segment::Ldtr);
        let ok = v.unusable(Segment::Ldtr)
            || (ldtr & 0x9F == 0x82 && s.get(f::GUEST_LDTR_SELECTOR) & 4 == 0);
        self.verdict(CheckId::GUEST_LDTR_TYPE, ok)?;

        let ok = Segment::ALL.iter().all(|&seg| {
            let base = s.get(seg.base());
            match seg {
                Segment::Fs | Segment::Gs | Segment::Ldtr | Segment::Tr => canon(base),
                _ => low32(base),
            }
        });
        self.verdict(CheckId::GUEST_SEGMENT_BASES, ok)
    }

    fn guest_state(&mut self, s: &VmState) -> Verdict {
        let v = V(s);
        let long = v.long_guest();
        let ok = (FIRST_RESERVED..FIELD_COUNT).all(|i| s.get(FieldId(i as u16)) == 0);
        self.verdict(CheckId::GUEST_RESERVED_FIELDS, ok)?;

        let cr0 = v.cr0();
        let pe = cr0 & 1 == 1;
        let pg = cr0 >> 31 == 1;
        self.verdict(CheckId::GUEST_CR0_FIXED, cr0 & !arch::CR0_VALID == 0 && cr0 & arch::CR0_NE != 0)?;
        self.verdict(CheckId::GUEST_IA32E_REQUIRES_PG, !long || pg)?;
        self.verdict(CheckId::GUEST_CR0_PG_PE, !pg || pe)?;
        let ug = v.sec() & bits::proc2::UNRESTRICTED_GUEST as u64 != 0;
        self.verdict(CheckId::GUEST_CR0_PE_WITHOUT_UG, ug || pe)?;

        let cr4 = v.cr4();
        let pae = cr4 >> 5 & 1 == 1;
        self.verdict(CheckId::GUEST_CR4_FIXED, cr4 & !arch::CR4_VALID == 0 && cr4 & arch::CR4_VMXE != 0)?;
        if !self.bug(BugId::B1_MissingIa32ePaeCheck) {
            self.verdict(CheckId::GUEST_IA32E_REQUIRES_PAE, !long || pae)?;
        }
        self.verdict(CheckId::GUEST_CR4_PCIDE, long || cr4 >> 17 & 1 == 0)?;
        let ok = self.below_width(s.get(f::GUEST_CR3));
        self.verdict(CheckId::GUEST_CR3_WIDTH, ok)?;
        let ok = low32(s.get(f::GUEST_DR7)) && s.get(f::GUEST_DEBUGCTL) & !arch::DEBUGCTL_VALID == 0;
        self.verdict(CheckId::GUEST_DEBUG_STATE, ok)?;

        let efer = v.efer();
        let lme = efer >> 8 & 1 == 1;
        let lma = efer >> 10 & 1 == 1;
        self.verdict(CheckId::GUEST_EFER_RESERVED, efer & !arch::EFER_VALID == 0)?;
        self.verdict(CheckId::GUEST_IA32E_REQUIRES_LME, !long || lme)?;
        self.verdict(CheckId::GUEST_EFER_LMA, lma == long && lma == (lme && pg))?;
        if !self.bug(BugId::B1_MissingIa32ePaeCheck) {
            self.verdict(CheckId::GUEST_LME_REQUIRES_PAE, !lme || pae)?;
        }

        let rflags = s.get(f::GUEST_RFLAGS);
        let event = v.event();
        let ext_int = matches!(event, Some((0, _)));
        let vm86 = rflags >> 17 & 1 == 1;
        cov!(self, "rflags", (rflags >> 9 & 1) << 1 | vm86 as u64);
        let ok = rflags & 2 == 2
            && rflags & arch::RFLAGS_RESERVED == 0
            && !(vm86 && (long || !pe))
            && (!ext_int || rflags & arch::RFLAGS_IF != 0);
        self.verdict(CheckId::GUEST_RFLAGS, ok)?;

        self.segments(s)?;

        let ok = canon(s.get(f::GUEST_GDTR_BASE))
            && canon(s.get(f::GUEST_IDTR_BASE))
            && s.get(f::GUEST_GDTR_LIMIT) <= 0xFFFF
            && s.get(f::GUEST_IDTR_LIMIT) <= 0xFFFF;
        self.verdict(CheckId::GUEST_DESCRIPTOR_TABLES, ok)?;
        let rip = s.get(f::GUEST_RIP);
        let cs_l = v.ar(Segment::Cs) >> 13 & 1 == 1;
        self.verdict(CheckId::GUEST_RIP, if long && cs_l { canon(rip) } else { low32(rip) })?;
        let ok = canon(s.get(f::GUEST_SYSENTER_ESP)) && canon(s.get(f::GUEST_SYSENTER_EIP));
        self.verdict(CheckId::GUEST_SYSENTER_CANONICAL, ok)?;
        if self.has_feature(FeatureId::LoadPat) {
            let on = v.entry() & bits::entry::LOAD_PAT as u64 != 0;
            self.verdict(CheckId::GUEST_PAT_VALID, !on || pat_entries_valid(s.get(f::GUEST_PAT)))?;
        }

        let act = s.get(f::GUEST_ACTIVITY_STATE);
        cov!(self, "activity", act.min(4));
        let supported = match act {
            0 => true,
            1 => self.has_feature(FeatureId::ActivityStateHlt),
            2 | 3 if self.bug(BugId::B4_ActivityStateBlindCopy) => true,
            2 => self.has_feature(FeatureId::ActivityStateShutdown),
            3 => self.has_feature(FeatureId::ActivityStateWaitForSipi),
            _ => false,
        };
        self.verdict(CheckId::GUEST_ACTIVITY_STATE, supported)?;

        let intr = s.get(f::GUEST_INTERRUPTIBILITY);
        let sti = intr & 1 == 1;
        let movss = intr & 2 == 2;
        cov!(self, "interruptibility", intr.min(16));
        let nmi_inj = matches!(event, Some((2, _)));
        let ok = intr < 16
            && intr & 4 == 0
            && !(sti && movss)
            && (rflags & arch::RFLAGS_IF != 0 || !sti)
            && (act == 0 || !(sti || movss))
            && !(ext_int && (sti || movss))
            && !(nmi_inj && movss);
        self.verdict(CheckId::GUEST_INTERRUPTIBILITY, ok)?;
        self.verdict(CheckId::GUEST_PENDING_DEBUG, s.get(f::GUEST_PENDING_DBG) & !arch::PENDING_DBG_VALID == 0)?;
        self.verdict(CheckId::GUEST_LINK_POINTER, s.get(f::GUEST_LINK_POINTER) == u64::MAX)?;
        if self.has_feature(FeatureId::VirtualGif) {
            let vgif = s.get(f::GUEST_VGIF_STATE);
            cov!(self, "vgif", vgif.min(4));
            self.verdict(CheckId::GUEST_VGIF_STATE, vgif < 4)?;
        }
        Ok(())
    }

    /// Silent corrections the model CPU applies instead of failing the entry.
    fn silent_round(&mut self, s: &mut VmState) -> Vec<(FieldId, u64)> {
        let mut out = Vec::new();
        if s.get(f::GUEST_ACTIVITY_STATE) > 3 {
            cov!(self, "silent_activity", 0);
            s.set(f::GUEST_ACTIVITY_STATE, 0);
            out.push((f::GUEST_ACTIVITY_STATE, 0));
        }
        for (reg, field) in [
            (CapReg::Pin, f::PIN_CONTROLS),
            (CapReg::Proc, f::PROC_CONTROLS),
            (CapReg::Exit, f::EXIT_CONTROLS),
            (CapReg::Entry, f::ENTRY_CONTROLS),
        ] {
            let must = self.config.profile.masks(reg).allowed0 as u64;
            let cur = s.get(field);
            if cur & must != must {
                cov!(self, "silent_ctl", reg as u32);
                s.set(field, cur | must);
                out.push((field, cur | must));
            }
        }
        out
    }

    pub(super) fn nested_entry(&mut self, vmcs12: &VmState) -> (EntryStatus, Vec<(FieldId, u64)>) {
        self.path_hash = 0xCBF2_9CE4_8422_2325;
        let mut work = vmcs12.clone();
        let rounded = if self.config.silent_round { self.silent_round(&mut work) } else { Vec::new() };
        let checked = self
            .controls(&work)
            .and_then(|_| self.host_state(&work))
            .and_then(|_| self.guest_state(&work));
        let status = match checked {
            Err(Fail::Reject(id)) => self.reject(&work, id),
            Err(Fail::Crash(bug, msg)) => EntryStatus::Crashed { bug, diagnostic: msg },
            Ok(()) => match self.load_msrs(&work).and_then(|_| self.translate(&work)) {
                Ok(vmcs02) => EntryStatus::Accepted(Box::new(vmcs02)),
                Err((bug, msg)) => EntryStatus::Crashed { bug, diagnostic: msg },
            },
        };
        (status, rounded)
    }

    fn reject(&mut self, s: &VmState, id: CheckId) -> EntryStatus {
        cov!(self, "entry_fail", id as u32);
        if self.bug(BugId::B6_VgifAssumption)
            && self.has_feature(FeatureId::VirtualGif)
            && s.get(f::GUEST_VGIF_STATE) & 1 == 0
        {
            let msg = format!("Assertion vgif failed: GIF clear while unwinding failed entry ({id})");
            return EntryStatus::Crashed { bug: BugId::B6_VgifAssumption, diagnostic: msg };
        }
        EntryStatus::Rejected(RejectReason::Check(id))
    }

    fn load_msrs(&mut self, s: &VmState) -> Result<(), (BugId, String)> {
        let n = s.get(f::ENTRY_MSR_LOAD_COUNT) as usize;
        for i in 0..n.min(4) {
            let idx = s.get(crate::checks::MSR_LOAD_INDEX[i]) as u32;
            let val = s.get(crate::checks::MSR_LOAD_VALUE[i]);
            let pos = arch::LOADABLE_MSRS.iter().position(|&m| m == idx).unwrap_or(15);
            cov!(self, "msr_load", (i as u32) << 4 | pos as u32);
            if arch::msr_holds_address(idx) && !canon(val) {
                // Only reachable when the canonical check was skipped.
                let msg = format!("general protection fault, probably for non-canonical address {val:#x}");
                return Err((BugId::B2_NonCanonicalMsrLoad, msg));
            }
        }
        Ok(())
    }

    fn translate(&mut self, s: &VmState) -> Result<VmState, (BugId, String)> {
        let v = V(s);
        let mut out = s.clone();
        for (field, value) in L0_HOST {
            out.set(field, value);
        }

        let profile = &self.config.profile;
        let merged = [
            (CapReg::Pin, f::PIN_CONTROLS, v.pin() | (bits::pin::EXT_INT_EXITING | bits::pin::NMI_EXITING) as u64),
            (CapReg::Proc, f::PROC_CONTROLS, v.proc()),
            (CapReg::Proc2, f::PROC2_CONTROLS, v.sec()),
            (CapReg::Exit, f::EXIT_CONTROLS, v.exit() | bits::exit::HOST_ADDR_SPACE_SIZE as u64),
            (CapReg::Entry, f::ENTRY_CONTROLS, v.entry()),
        ];
        for (reg, field, want) in merged {
            let m = profile.masks(reg);
            let value = (want | m.allowed0 as u64) & m.allowed1 as u64;
            out.set(field, value);
            let mut rest = value;
            while rest != 0 {
                let bit = rest.trailing_zeros();
                cov!(self, "ctl02_bit", (reg as u32) << 6 | bit);
                rest &= rest - 1;
            }
        }

        let act = s.get(f::GUEST_ACTIVITY_STATE);
        if act >= 2 {
            if self.bug(BugId::B4_ActivityStateBlindCopy) {
                if act == 3 {
                    let msg = "watchdog: BUG: soft lockup - CPU#0 stuck waiting for SIPI in nested guest".to_string();
                    return Err((BugId::B4_ActivityStateBlindCopy, msg));
                }
            } else {
                cov!(self, "activity_sanitized", act);
                out.set(f::GUEST_ACTIVITY_STATE, 0);
            }
        }

        let sec = v.sec();
        if sec & bits::proc2::ENABLE_EPT as u64 != 0 {
            let eptp = s.get(f::EPT_POINTER);
            cov!(self, "ept_path", (eptp & 7) << 1 | (eptp >> 6 & 1));
        } else {
            self.shadow_paging(s)?;
        }
        if sec & bits::proc2::ENABLE_VPID as u64 != 0 {
            cov!(self, "vpid", s.get(f::VPID).min(3));
        }
        if let Some((ty, vec)) = v.event() {
            cov!(self, "inject_ok", (ty as u32) << 8 | vec as u32);
        }
        Ok(out)
    }

    fn shadow_paging(&mut self, s: &VmState) -> Result<(), (BugId, String)> {
        let v = V(s);
        let cr0 = v.cr0();
        let cr4 = v.cr4();
        let lma = v.efer() >> 10 & 1 == 1;
        let paging = cr0 >> 31 == 1;
        let pae = cr4 >> 5 & 1 == 1;
        // Root levels indexed by [LMA][PAE]; the (LMA, !PAE) slot does not exist.
        const LEVELS: [[u32; 2]; 2] = [[2, 3], [0, 4]];
        let mode = (paging as u32) << 3 | (lma as u32) << 2 | (pae as u32) << 1 | (cr4 >> 17 & 1) as u32;
        cov!(self, "shadow_mode", mode);
        if paging {
            let levels = LEVELS[lma as usize][pae as usize];
            if levels == 0 {
                if self.bug(BugId::B1_MissingIa32ePaeCheck) {
                    let msg = format!(
                        "UBSAN: array-index-out-of-bounds in shadow walk: index {} out of range (cr4 {cr4:#x})",
                        (lma as u32) << 1 | pae as u32
                    );
                    return Err((BugId::B1_MissingIa32ePaeCheck, msg));
                }
                cov!(self, "shadow_impossible", 0);
            } else {
                cov!(self, "shadow_levels", levels);
            }
        }
        Ok(())
    }
}

/// Host-state values owned by L0 and written into every VMCS02.
const L0_HOST: [(FieldId, u64); 20] = [
    (f::HOST_ES_SELECTOR, 0x18),
    (f::HOST_CS_SELECTOR, 0x10),
    (f::HOST_SS_SELECTOR, 0x18),
    (f::HOST_DS_SELECTOR, 0x18),
    (f::HOST_FS_SELECTOR, 0),
    (f::HOST_GS_SELECTOR, 0),
    (f::HOST_TR_SELECTOR, 0x40),
    (f::HOST_SYSENTER_CS, 0),
    (f::HOST_CR0, 0x8005_0033),
    (f::HOST_CR3, 0x0010_9000),
    (f::HOST_CR4, 0x0037_26F0),
    (f::HOST_FS_BASE, 0),
    (f::HOST_GS_BASE, 0xFFFF_8880_7FC0_0000),
    (f::HOST_TR_BASE, 0xFFFF_FE00_0000_3000),
    (f::HOST_GDTR_BASE, 0xFFFF_FE00_0000_1000),
    (f::HOST_IDTR_BASE, 0xFFFF_FE00_0000_0000),
    (f::HOST_SYSENTER_ESP, 0xFFFF_FE00_0000_5000),
    (f::HOST_SYSENTER_EIP, 0xFFFF_FFFF_8100_1B60),
    (f::HOST_RIP, 0xFFFF_FFFF_8104_A0E0),
    (f::HOST_EFER, 0xD01),
];
