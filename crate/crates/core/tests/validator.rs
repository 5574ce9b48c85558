// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;

use nestfuzz_core::capability::bits;
use nestfuzz_core::checks::arch::*;
use nestfuzz_core::{
    enabled_checks, field::*, round, round_controls, round_guest_state, round_host_state, round_traced, validate,
    CapabilityProfile, CheckId, FeatureId, FieldGroup, FieldId, VmState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn valid_base(p: &CapabilityProfile) -> VmState {
    round(&VmState::zeroed(), p)
}

fn random_state(seed: u64) -> VmState {
    VmState::random(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Sign extension from bit 47, computed with an arithmetic shift.
fn sign_extend_47(v: u64) -> u64 {
    (((v << 16) as i64) >> 16) as u64
}

fn majority_agrees_with_bit47(v: u64) -> bool {
    let ones = (v >> 47).count_ones();
    (ones >= 9) == (v >> 47 & 1 == 1)
}

#[test]
fn rounded_zero_state_is_valid() {
    for p in [CapabilityProfile::minimal(), CapabilityProfile::default_static(), CapabilityProfile::full()] {
        let s = valid_base(&p);
        assert!(validate(&s, &p).is_empty(), "{:?}", validate(&s, &p));
    }
}

#[test]
fn ia32e_guest_without_pae_is_reported() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(ENTRY_CONTROLS, s.get(ENTRY_CONTROLS) | bits::entry::IA32E_MODE_GUEST as u64);
    s.set(GUEST_CR4, s.get(GUEST_CR4) & !CR4_PAE);
    assert!(validate(&s, &p).contains(CheckId::GUEST_IA32E_REQUIRES_PAE));
}

#[test]
fn non_canonical_msr_load_is_reported() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(ENTRY_MSR_LOAD_COUNT, 1);
    s.set(ENTRY_MSR_LOAD_ADDR, 0x3000);
    s.set(MSR_LOAD_INDEX_0, MSR_KERNEL_GS_BASE as u64);
    s.set(MSR_LOAD_VALUE_0, 0x0000_8000_0000_0000);
    let report = validate(&s, &p);
    assert!(report.contains(CheckId::MSRLOAD_CANONICAL));
    assert_eq!(report.len(), 1);
}

#[test]
fn cleared_must_be_one_control_bit_is_set() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(PIN_CONTROLS, s.get(PIN_CONTROLS) & !0x2);
    assert!(validate(&s, &p).contains(CheckId::PIN_CONTROLS_RESERVED));
    let r = round_controls(&s, &p);
    assert_eq!(r.get(PIN_CONTROLS) & 0x2, 0x2);
}

#[test]
fn valid_controls_are_a_fixpoint() {
    let p = CapabilityProfile::full();
    let s = valid_base(&p);
    assert_eq!(round_controls(&s, &p), s);
    assert_eq!(round_host_state(&s, &p), s);
    assert_eq!(round_guest_state(&s, &p), s);
}

#[test]
fn bitmap_address_is_page_aligned() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(PROC_CONTROLS, s.get(PROC_CONTROLS) | bits::proc::USE_IO_BITMAPS as u64);
    s.set(IO_BITMAP_A, 0x1001);
    s.set(IO_BITMAP_B, 0x2000);
    let r = round(&s, &p);
    assert_eq!(r.get(IO_BITMAP_A), 0x1000);
    assert_eq!(r.get(IO_BITMAP_B), 0x2000);
    assert!(validate(&r, &p).is_empty());
}

#[test]
fn host_paging_forces_protection() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(HOST_CR0, (s.get(HOST_CR0) | CR0_PG) & !CR0_PE);
    let r = round_host_state(&s, &p);
    assert_eq!(r.get(HOST_CR0) & (CR0_PG | CR0_PE), CR0_PG | CR0_PE);
}

#[test]
fn host_rip_is_made_canonical() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(EXIT_CONTROLS, s.get(EXIT_CONTROLS) | bits::exit::HOST_ADDR_SPACE_SIZE as u64);
    let s = round(&s, &p);
    for rip in [0x00FF_0000_0000_1000u64, 0xFFF7_0000_0000_2000, 0x0000_8000_0000_0000 | 0xFFFF << 48] {
        let mut t = s.clone();
        t.set(HOST_RIP, rip);
        let r = round_host_state(&t, &p);
        if majority_agrees_with_bit47(rip) {
            assert_eq!(r.get(HOST_RIP), sign_extend_47(rip), "{rip:#x}");
        }
        assert!(validate(&r, &p).is_empty());
    }
}

#[test]
fn lme_without_pae_sets_pae() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(GUEST_EFER, s.get(GUEST_EFER) | EFER_LME);
    s.set(GUEST_CR4, s.get(GUEST_CR4) & !CR4_PAE);
    let r = round_guest_state(&s, &p);
    assert_ne!(r.get(GUEST_CR4) & CR4_PAE, 0);
    assert!(validate(&r, &p).is_empty());
}

#[test]
fn rflags_fixed_bit_is_set() {
    let p = CapabilityProfile::default_static();
    let mut s = valid_base(&p);
    s.set(GUEST_RFLAGS, 0);
    assert!(validate(&s, &p).contains(CheckId::GUEST_RFLAGS));
    assert_eq!(round_guest_state(&s, &p).get(GUEST_RFLAGS) & RFLAGS_FIXED1, RFLAGS_FIXED1);
}

#[test]
fn undefined_activity_state_becomes_active() {
    let p = CapabilityProfile::default_static();
    assert!(p.activity_supported(ACTIVITY_HLT) && !p.activity_supported(ACTIVITY_SHUTDOWN));
    let mut s = valid_base(&p);
    s.set(GUEST_ACTIVITY_STATE, 7);
    assert_eq!(round(&s, &p).get(GUEST_ACTIVITY_STATE), ACTIVITY_ACTIVE);
    s.set(GUEST_ACTIVITY_STATE, ACTIVITY_SHUTDOWN);
    assert_eq!(round(&s, &p).get(GUEST_ACTIVITY_STATE), ACTIVITY_ACTIVE);
    s.set(GUEST_ACTIVITY_STATE, ACTIVITY_WAIT_SIPI);
    assert_eq!(round(&s, &p).get(GUEST_ACTIVITY_STATE), ACTIVITY_HLT);
}

#[test]
fn gated_checks_follow_features() {
    let full = enabled_checks(&CapabilityProfile::full());
    let min = enabled_checks(&CapabilityProfile::minimal());
    assert!(full.contains(&CheckId::EPTP_VALID));
    assert!(!min.contains(&CheckId::EPTP_VALID));
    assert!(!min.contains(&CheckId::GUEST_VGIF_STATE));
    assert_eq!(full.len(), CheckId::ALL.len());
}

#[test]
fn rounding_many_random_states_is_sound() {
    let p = CapabilityProfile::default_static();
    for seed in 0..2_000 {
        let r = round(&random_state(seed), &p);
        let report = validate(&r, &p);
        assert!(report.is_empty(), "seed {seed}: {report:?}");
    }
}

fn field_set(checks: &[CheckId]) -> HashSet<FieldId> {
    checks.iter().flat_map(|c| c.fields().iter().copied()).collect()
}

fn profile_strategy() -> impl Strategy<Value = CapabilityProfile> {
    any::<u32>().prop_map(CapabilityProfile::from_feature_bits)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn prop_soundness(seed in any::<u64>(), p in profile_strategy()) {
        let r = round(&random_state(seed), &p);
        prop_assert!(validate(&r, &p).is_empty(), "{:?}", validate(&r, &p));
    }

    #[test]
    fn prop_idempotent(seed in any::<u64>(), p in profile_strategy()) {
        let r = round(&random_state(seed), &p);
        prop_assert_eq!(round(&r, &p), r);
    }

    #[test]
    fn prop_minimal_touch(seed in any::<u64>(), p in profile_strategy()) {
        let s = random_state(seed);
        let (r, fired) = round_traced(&s, &p);
        let allowed = field_set(&fired);
        for f in s.diff_fields(&r) {
            prop_assert!(allowed.contains(&f), "{} changed without a fired check", f);
        }
    }

    #[test]
    fn prop_minimal_touch_near_valid(seed in any::<u64>(), field in 0usize..165, bit in 0u32..64) {
        // Single-bit flips of a valid state: only fields of corrected checks move.
        let p = CapabilityProfile::default_static();
        let base = round(&random_state(seed), &p);
        let f = FieldId::new(field).unwrap();
        let mut s = base.clone();
        s.set_bit(f, bit % f.width(), !s.bit(f, bit % f.width()));
        let violated: Vec<CheckId> = validate(&s, &p).checks().collect();
        let (r, fired) = round_traced(&s, &p);
        prop_assert_eq!(fired.is_empty(), violated.is_empty());
        prop_assert_eq!(fired.first(), violated.first());
        let allowed = field_set(&fired);
        for changed in s.diff_fields(&r) {
            prop_assert!(allowed.contains(&changed));
        }
    }

    #[test]
    fn prop_group_ordering(seed in any::<u64>(), p in profile_strategy()) {
        let s = random_state(seed);
        let host = round_host_state(&s, &p);
        let guest = round_guest_state(&s, &p);
        for f in FieldId::all() {
            if f.group().is_control() {
                prop_assert_eq!(host.get(f), s.get(f));
                prop_assert_eq!(guest.get(f), s.get(f));
            }
            if f.group() == FieldGroup::HostState {
                prop_assert_eq!(guest.get(f), s.get(f));
            }
        }
        let c = round_controls(&s, &p);
        prop_assert!(validate(&c, &p).checks().all(|k| !k.group().is_control()));
        let h = round_host_state(&c, &p);
        prop_assert!(validate(&h, &p).checks().all(|k| k.group() == FieldGroup::GuestState));
    }

    #[test]
    fn prop_profile_monotonic(bits in any::<u32>(), which in 0usize..24) {
        let f = FeatureId::ALL[which];
        let on = CapabilityProfile::from_feature_bits(bits | f.bit());
        let off = CapabilityProfile::from_feature_bits(bits & !f.bit());
        let removed: HashSet<FeatureId> =
            on.features().into_iter().filter(|g| !off.has(*g)).collect();
        let e_on: HashSet<CheckId> = enabled_checks(&on).into_iter().collect();
        let e_off: HashSet<CheckId> = enabled_checks(&off).into_iter().collect();
        prop_assert!(e_off.is_subset(&e_on));
        let dropped: HashSet<CheckId> = e_on.difference(&e_off).copied().collect();
        let expected: HashSet<CheckId> = CheckId::ALL
            .iter()
            .copied()
            .filter(|c| c.gate().is_some_and(|g| removed.contains(&g)))
            .collect();
        prop_assert_eq!(dropped, expected);
    }
}

/// Exhaustive differential over a reduced space: the low six bits of three
/// fields, with everything else held at a valid baseline.
#[test]
fn brute_force_nearest_valid_state() {
    let p = CapabilityProfile::default_static();
    let mut base = valid_base(&p);
    base.set(PROC_CONTROLS, base.get(PROC_CONTROLS) | bits::proc::ACTIVATE_SECONDARY as u64);
    base.set(PROC2_CONTROLS, bits::proc2::ENABLE_EPT as u64);
    base.set(ENTRY_CONTROLS, base.get(ENTRY_CONTROLS) | bits::entry::LOAD_PAT as u64);
    let base = round(&base, &p);
    assert!(validate(&base, &p).is_empty());

    let fields = [EPT_POINTER, CR3_TARGET_COUNT, GUEST_PAT];
    let compose = |code: u32| {
        let mut s = base.clone();
        for (i, f) in fields.iter().enumerate() {
            let low = (code >> (6 * i)) as u64 & 0x3F;
            s.set(*f, (base.get(*f) & !0x3F) | low);
        }
        s
    };
    let valid: Vec<u32> = (0..1u32 << 18).filter(|&c| validate(&compose(c), &p).is_empty()).collect();
    assert!(!valid.is_empty());

    let mut compared = 0;
    for code in 0..1u32 << 18 {
        let mut best = u32::MAX;
        let mut winners = 0;
        let mut winner = 0;
        for &v in &valid {
            let d = (code ^ v).count_ones();
            if d < best {
                best = d;
                winners = 1;
                winner = v;
            } else if d == best {
                winners += 1;
            }
        }
        if winners == 1 {
            compared += 1;
            assert_eq!(round(&compose(code), &p), compose(winner), "code {code:#x}");
        }
    }
    assert!(compared > 1000, "only {compared} unique-nearest states");
}
