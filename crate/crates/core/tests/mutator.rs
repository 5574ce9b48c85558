// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;

use nestfuzz_core::mutator::FieldMutation;
use nestfuzz_core::{mutate, parse_directive, round, validate, CapabilityProfile, FieldId, MutationDirective, VmState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn state(seed: u64) -> VmState {
    VmState::random(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Counts (field, bit) pairs selected an odd number of times.
fn odd_selections(d: &MutationDirective) -> usize {
    let mut odd = HashSet::new();
    for m in &d.fields {
        for &b in &m.bits {
            if !odd.insert((m.field, b)) {
                odd.remove(&(m.field, b));
            }
        }
    }
    odd.len()
}

#[test]
fn three_fields_eight_distinct_bits_flip_24() {
    let d = MutationDirective {
        fields: [1u16, 50, 120]
            .iter()
            .map(|&f| FieldMutation { field: FieldId(f), bits: (0..8).collect() })
            .collect(),
    };
    let s = state(9);
    assert_eq!(s.hamming_distance(&mutate(&s, &d)), 24);
}

#[test]
fn single_bit_directive_flips_one_bit() {
    let d = MutationDirective { fields: vec![FieldMutation { field: FieldId(17), bits: vec![0] }] };
    let s = state(3);
    assert_eq!(s.hamming_distance(&mutate(&s, &d)), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn prop_directive_in_range(bytes in proptest::collection::vec(any::<u8>(), 16..64)) {
        let d = parse_directive(&bytes).unwrap();
        prop_assert!(d.is_well_formed());
        prop_assert_eq!(parse_directive(&bytes).unwrap(), d);
    }

    #[test]
    fn prop_involution_and_locality(seed in any::<u64>(), bytes in proptest::collection::vec(any::<u8>(), 16..40)) {
        let d = parse_directive(&bytes).unwrap();
        let s = state(seed);
        let m = mutate(&s, &d);
        prop_assert_eq!(mutate(&m, &d), s.clone());
        let named: HashSet<FieldId> = d.touched_fields().collect();
        prop_assert!(s.diff_fields(&m).iter().all(|f| named.contains(f)));
    }

    #[test]
    fn prop_bit_budget(seed in any::<u64>(), bytes in proptest::collection::vec(any::<u8>(), 16..40)) {
        let d = parse_directive(&bytes).unwrap();
        let s = state(seed);
        let dist = s.hamming_distance(&mutate(&s, &d)) as usize;
        prop_assert_eq!(dist, odd_selections(&d));
        prop_assert!(dist <= 24);
        prop_assert_eq!(dist % 2, d.total_bits() % 2);
    }
}

#[test]
fn mutations_straddle_the_validity_boundary() {
    let p = CapabilityProfile::default_static();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut invalid = 0;
    for _ in 0..1000 {
        let r = round(&VmState::random(&mut rng), &p);
        assert!(validate(&r, &p).is_empty());
        let mut bytes = [0u8; 64];
        rand::RngCore::fill_bytes(&mut rng, &mut bytes);
        let d = parse_directive(&bytes).unwrap();
        if !validate(&mutate(&r, &d), &p).is_empty() {
            invalid += 1;
        }
    }
    assert!(invalid > 500, "only {invalid}/1000 mutated states invalid");
}
