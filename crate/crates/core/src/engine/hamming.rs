// SPDX-License-Identifier: Apache-2.0

//! Bit distances between random, default-initialized and rounded states.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::capability::generate_profile;
use crate::error::{Error, Result};
use crate::state::VmState;
use crate::validator::round;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: u32,
    pub p5: u32,
    pub p25: u32,
    pub median: u32,
    pub p75: u32,
    pub p95: u32,
    pub max: u32,
}

impl Summary {
    pub fn of(values: &[u32]) -> Summary {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len().max(1) as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        // Nearest-rank percentile.
        let pct = |q: f64| -> u32 {
            if sorted.is_empty() {
                return 0;
            }
            let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
            sorted[rank - 1]
        };
        Summary {
            count: values.len(),
            mean,
            stddev: var.sqrt(),
            min: pct(0.0),
            p5: pct(0.05),
            p25: pct(0.25),
            median: pct(0.5),
            p75: pct(0.75),
            p95: pct(0.95),
            max: sorted.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HammingReport {
    pub seed: u64,
    /// Random state against its rounded form.
    pub random_vs_rounded: Vec<u32>,
    /// Rounded state against the rounded all-zero state of the same profile.
    pub default_vs_rounded: Vec<u32>,
    /// Consecutive rounded states.
    pub rounded_pairwise: Vec<u32>,
}

impl HammingReport {
    pub fn summaries(&self) -> [(&'static str, Summary); 3] {
        [
            ("random_vs_rounded", Summary::of(&self.random_vs_rounded)),
            ("default_vs_rounded", Summary::of(&self.default_vs_rounded)),
            ("rounded_pairwise", Summary::of(&self.rounded_pairwise)),
        ]
    }

    /// Long format: `comparison,index,distance`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "comparison,index,distance")?;
        let series = [
            ("random_vs_rounded", &self.random_vs_rounded),
            ("default_vs_rounded", &self.default_vs_rounded),
            ("rounded_pairwise", &self.rounded_pairwise),
        ];
        for (name, values) in series {
            for (i, v) in values.iter().enumerate() {
                writeln!(out, "{name},{i},{v}")?;
            }
        }
        Ok(())
    }
}

/// Draws `n` random states, each with its own random profile.
pub fn hamming_experiment(n: usize, seed: u64) -> Result<HammingReport> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("hamming experiment needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = HammingReport {
        seed,
        random_vs_rounded: Vec::with_capacity(n),
        default_vs_rounded: Vec::with_capacity(n),
        rounded_pairwise: Vec::with_capacity(n - 1),
    };
    let mut prev: Option<VmState> = None;
    for _ in 0..n {
        let profile = generate_profile(&rng.random::<[u8; 3]>())?;
        let raw = VmState::random(&mut rng);
        let rounded = round(&raw, &profile);
        let default = round(&VmState::zeroed(), &profile);
        report.random_vs_rounded.push(raw.hamming_distance(&rounded));
        report.default_vs_rounded.push(default.hamming_distance(&rounded));
        if let Some(p) = &prev {
            report.rounded_pairwise.push(p.hamming_distance(&rounded));
        }
        prev = Some(rounded);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_states_give_one_pair() {
        let r = hamming_experiment(2, 7).unwrap();
        assert_eq!(r.rounded_pairwise.len(), 1);
        assert_eq!(r.random_vs_rounded.len(), 2);
        assert!(hamming_experiment(1, 7).is_err());
    }

    #[test]
    fn summary_percentiles() {
        let s = Summary::of(&[1, 2, 3, 4]);
        assert_eq!(s.mean, 2.5);
        assert_eq!((s.min, s.median, s.max), (1, 2, 4));
        assert!((s.stddev - 1.118_033_988).abs() < 1e-6);
    }
}
