// SPDX-License-Identifier: Apache-2.0

//! Shared inputs for the pipeline benchmarks.

use nestfuzz_core::{round, CapabilityProfile, FuzzInput, VmState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic random states.
pub fn states(n: usize, seed: u64) -> Vec<VmState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| VmState::random(&mut rng)).collect()
}

/// The states above after rounding against `profile`.
pub fn rounded(n: usize, seed: u64, profile: &CapabilityProfile) -> Vec<VmState> {
    states(n, seed).iter().map(|s| round(s, profile)).collect()
}

/// Deterministic random fuzz inputs.
pub fn inputs(n: usize, seed: u64) -> Vec<FuzzInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| FuzzInput::random(&mut rng)).collect()
}
