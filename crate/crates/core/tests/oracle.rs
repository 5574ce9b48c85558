// SPDX-License-Identifier: Apache-2.0

use nestfuzz_core::capability::bits;
use nestfuzz_core::checks::arch::*;
use nestfuzz_core::oracle::{SequenceError, VMCS12_REGION, VMXON_REGION};
use nestfuzz_core::{
    field::*, generate_profile, mutate, parse_directive, round, validate, BugId, BugSet, CapabilityProfile, CheckId,
    EntryStatus, FeatureId, OpResponse, Oracle, OracleConfig, RejectReason, TriggerKind, VmState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn strict(p: &CapabilityProfile) -> OracleConfig {
    OracleConfig::new(p.clone()).with_silent_round(false)
}

fn entry(cfg: OracleConfig, s: &VmState) -> EntryStatus {
    Oracle::ready(cfg, s).vm_entry(s).status
}

fn long_mode(s: &mut VmState) {
    s.set(ENTRY_CONTROLS, s.get(ENTRY_CONTROLS) | bits::entry::IA32E_MODE_GUEST as u64);
    s.set(EXIT_CONTROLS, s.get(EXIT_CONTROLS) | bits::exit::HOST_ADDR_SPACE_SIZE as u64);
}

#[test]
fn rounded_state_is_accepted_with_guest_fields_intact() {
    let p = CapabilityProfile::full();
    let s = round(&VmState::random(&mut ChaCha8Rng::seed_from_u64(1)), &p);
    let EntryStatus::Accepted(vmcs02) = entry(OracleConfig::new(p.clone()), &s) else { panic!("rejected") };
    for f in [GUEST_CR0, GUEST_CR3, GUEST_CR4, GUEST_RIP, GUEST_RSP, GUEST_EFER, GUEST_CS_AR] {
        assert_eq!(vmcs02.get(f), s.get(f), "{f}");
    }
}

#[test]
fn missing_pae_check_crashes_shadow_paging() {
    let p = CapabilityProfile::default_static();
    let mut s = round(&VmState::zeroed(), &p);
    s.set(PROC_CONTROLS, s.get(PROC_CONTROLS) & !(bits::proc::ACTIVATE_SECONDARY as u64));
    s.set(PROC2_CONTROLS, 0);
    let mut s = round(&s, &p);
    long_mode(&mut s);
    s.set(GUEST_CR0, s.get(GUEST_CR0) | CR0_PG | CR0_PE);
    s.set(GUEST_EFER, s.get(GUEST_EFER) | EFER_LME | EFER_LMA);
    s.set(GUEST_CS_AR, s.get(GUEST_CS_AR) & !AR_DB);
    s.set(GUEST_CR4, s.get(GUEST_CR4) | CR4_PAE);
    let s = round(&s, &p);
    assert!(validate(&s, &p).is_empty());
    let mut no_pae = s.clone();
    no_pae.set(GUEST_CR4, s.get(GUEST_CR4) & !CR4_PAE);
    no_pae.set(GUEST_EFER, s.get(GUEST_EFER) & !EFER_LME);
    // LMA without LME fails a later check, so keep LME and accept that failure ordering.
    let mut lme = no_pae.clone();
    lme.set(GUEST_EFER, s.get(GUEST_EFER));
    let first = validate(&lme, &p).checks().next();
    assert_eq!(first, Some(CheckId::GUEST_IA32E_REQUIRES_PAE));

    let clean = strict(&p);
    assert_eq!(entry(clean, &lme), EntryStatus::Rejected(RejectReason::Check(CheckId::GUEST_IA32E_REQUIRES_PAE)));
    let buggy = strict(&p).with_bugs(BugSet::none().with(BugId::B1_MissingIa32ePaeCheck));
    match entry(buggy, &lme) {
        EntryStatus::Crashed { bug, diagnostic } => {
            assert_eq!(bug, BugId::B1_MissingIa32ePaeCheck);
            assert!(diagnostic.starts_with("UBSAN"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn wait_for_sipi_with_b4_soft_locks() {
    let p = CapabilityProfile::default_static();
    assert!(!p.has(FeatureId::ActivityStateWaitForSipi));
    let mut s = round(&VmState::zeroed(), &p);
    s.set(GUEST_ACTIVITY_STATE, ACTIVITY_WAIT_SIPI);
    s.set(GUEST_INTERRUPTIBILITY, 0);
    assert_eq!(
        entry(strict(&p), &s),
        EntryStatus::Rejected(RejectReason::Check(CheckId::GUEST_ACTIVITY_STATE))
    );
    let cfg = strict(&p).with_bugs(BugSet::none().with(BugId::B4_ActivityStateBlindCopy));
    let EntryStatus::Crashed { bug, diagnostic } = entry(cfg, &s) else { panic!() };
    assert_eq!(bug, BugId::B4_ActivityStateBlindCopy);
    assert!(diagnostic.contains("soft lockup"));
}

#[test]
fn shutdown_is_sanitized_without_b4() {
    let p = CapabilityProfile::full();
    let mut s = round(&VmState::zeroed(), &p);
    s.set(GUEST_ACTIVITY_STATE, ACTIVITY_SHUTDOWN);
    let EntryStatus::Accepted(v) = entry(strict(&p), &s) else { panic!() };
    assert_eq!(v.get(GUEST_ACTIVITY_STATE), 0);
}

#[test]
fn invalid_eptp_with_b3_triple_faults() {
    let p = CapabilityProfile::full();
    let mut s = round(&VmState::zeroed(), &p);
    s.set(PROC_CONTROLS, s.get(PROC_CONTROLS) | bits::proc::ACTIVATE_SECONDARY as u64);
    s.set(PROC2_CONTROLS, bits::proc2::ENABLE_EPT as u64);
    let s = round(&s, &p);
    let mut bad = s.clone();
    bad.set(EPT_POINTER, s.get(EPT_POINTER) ^ 0x18);
    assert_eq!(entry(strict(&p), &bad), EntryStatus::Rejected(RejectReason::Check(CheckId::EPTP_VALID)));
    let cfg = strict(&p).with_bugs(BugSet::none().with(BugId::B3_InvalidEptpTripleFault));
    assert!(matches!(entry(cfg, &bad), EntryStatus::Crashed { bug: BugId::B3_InvalidEptpTripleFault, .. }));
}

#[test]
fn non_canonical_msr_load_with_b2_faults() {
    let p = CapabilityProfile::default_static();
    let mut s = round(&VmState::zeroed(), &p);
    s.set(ENTRY_MSR_LOAD_COUNT, 1);
    s.set(ENTRY_MSR_LOAD_ADDR, 0x3000);
    s.set(MSR_LOAD_INDEX_0, MSR_LSTAR as u64);
    s.set(MSR_LOAD_VALUE_0, 0x8000_0000_0000_0000);
    assert_eq!(entry(strict(&p), &s), EntryStatus::Rejected(RejectReason::Check(CheckId::MSRLOAD_CANONICAL)));
    let cfg = strict(&p).with_bugs(BugSet::none().with(BugId::B2_NonCanonicalMsrLoad));
    let EntryStatus::Crashed { diagnostic, .. } = entry(cfg, &s) else { panic!() };
    assert!(diagnostic.contains("0x8000000000000000"));
}

#[test]
fn failed_entry_with_clear_vgif_asserts() {
    let p = CapabilityProfile::full();
    let mut s = round(&VmState::zeroed(), &p);
    s.set(GUEST_VGIF_STATE, 0);
    s.set(GUEST_RIP, 1 << 40);
    let cfg = strict(&p).with_bugs(BugSet::none().with(BugId::B6_VgifAssumption));
    assert!(matches!(entry(cfg.clone(), &s), EntryStatus::Crashed { bug: BugId::B6_VgifAssumption, .. }));
    s.set(GUEST_VGIF_STATE, VGIF_FLAG);
    assert!(matches!(entry(cfg, &s), EntryStatus::Rejected(_)));
}

#[test]
fn resume_with_lme_and_paging_off_warns_under_b5() {
    let p = CapabilityProfile::full();
    let cfg = OracleConfig::new(p.clone()).with_bugs(BugSet::none().with(BugId::B5_LmePgInconsistency));
    let mut s = round(&VmState::zeroed(), &p);
    long_mode(&mut s);
    s.set(GUEST_CR4, s.get(GUEST_CR4) | CR4_PAE);
    s.set(GUEST_CR0, s.get(GUEST_CR0) | CR0_PG | CR0_PE);
    s.set(GUEST_EFER, s.get(GUEST_EFER) | EFER_LME | EFER_LMA);
    let s = round(&s, &p);
    let mut o = Oracle::ready(cfg, &s);
    assert_eq!(o.vmlaunch(), OpResponse::Entered);
    assert_eq!(o.l2_exit(TriggerKind::CpuId, 0, 0), OpResponse::Exit { reflected: true });
    o.vmwrite(GUEST_CR0, s.get(GUEST_CR0) & !CR0_PG);
    let OpResponse::Crashed { bug, diagnostic } = o.vmresume() else { panic!() };
    assert_eq!(bug, BugId::B5_LmePgInconsistency);
    assert!(diagnostic.starts_with("WARNING"));
    assert!(o.crashed().is_some());
    o.reset();
    assert_eq!(o.restarts(), 1);
}

#[test]
fn silent_rounding_is_reported() {
    let p = CapabilityProfile::default_static();
    let mut s = round(&VmState::zeroed(), &p);
    s.set(GUEST_ACTIVITY_STATE, 9);
    let r = Oracle::ready(OracleConfig::new(p.clone()), &s).vm_entry(&s);
    assert!(r.is_accepted());
    assert_eq!(r.silently_rounded, vec![(GUEST_ACTIVITY_STATE, 0)]);
    let r = Oracle::ready(strict(&p), &s).vm_entry(&s);
    assert_eq!(r.status, EntryStatus::Rejected(RejectReason::Check(CheckId::GUEST_ACTIVITY_STATE)));
}

#[test]
fn entry_requires_current_vmcs() {
    let p = CapabilityProfile::full();
    let s = round(&VmState::zeroed(), &p);
    let mut o = Oracle::new(OracleConfig::new(p));
    o.load_vmcs12(&s);
    o.vmxon(VMXON_REGION);
    assert_eq!(o.vmwrite(GUEST_RIP, 0), OpResponse::VmFail(SequenceError::NoCurrentVmcs));
    assert_eq!(o.vmlaunch(), OpResponse::VmFail(SequenceError::NoCurrentVmcs));
    o.vmptrld(VMCS12_REGION);
    assert_eq!(o.vmlaunch(), OpResponse::Entered);
}

#[test]
fn vmx_instruction_is_reflected() {
    let p = CapabilityProfile::full();
    let s = round(&VmState::zeroed(), &p);
    let mut o = Oracle::ready(OracleConfig::new(p), &s);
    o.vmlaunch();
    assert_eq!(o.l2_exit(TriggerKind::VmxInstruction, 0, 0), OpResponse::Exit { reflected: true });
    assert!(!o.in_guest());
    assert_eq!(o.l2_exit(TriggerKind::CpuId, 0, 0), OpResponse::VmFail(SequenceError::NotInGuest));
}

fn agree(s: &VmState, p: &CapabilityProfile) -> Result<(), TestCaseError> {
    let first = validate(s, p).checks().next();
    let status = entry(strict(p), s);
    match (first, status) {
        (None, EntryStatus::Accepted(_)) => Ok(()),
        (Some(c), EntryStatus::Rejected(RejectReason::Check(r))) => {
            prop_assert_eq!(c, r);
            Ok(())
        }
        (f, st) => Err(TestCaseError::fail(format!("validator {f:?} oracle {st:?}"))),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    /// The oracle's first failing check equals the validator's first violation.
    #[test]
    fn oracle_agrees_with_validator_near_valid(seed in any::<u64>(), prof in any::<[u8; 3]>(), dir in any::<[u8; 24]>()) {
        let p = generate_profile(&prof).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = round(&VmState::random(&mut rng), &p);
        let s = mutate(&base, &parse_directive(&dir).unwrap());
        agree(&s, &p)?;
    }

    #[test]
    fn oracle_agrees_with_validator_on_raw_states(seed in any::<u64>(), prof in any::<[u8; 3]>()) {
        let p = generate_profile(&prof).unwrap();
        let s = VmState::random(&mut ChaCha8Rng::seed_from_u64(seed));
        agree(&s, &p)?;
    }

    /// Single-bit flips of one field at a time over a valid state.
    #[test]
    fn oracle_agrees_under_single_flips(seed in any::<u64>(), prof in any::<[u8; 3]>()) {
        let p = generate_profile(&prof).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = round(&VmState::random(&mut rng), &p);
        for _ in 0..32 {
            let f = nestfuzz_core::FieldId(rng.random_range(0..116));
            let mut s = base.clone();
            s.set(f, s.get(f) ^ 1 << rng.random_range(0..f.width()));
            agree(&s, &p)?;
        }
    }
}
