// SPDX-License-Identifier: Apache-2.0

//! End-to-end acceptance runs. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any hard criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nestfuzz_core::engine::hamming_experiment;
use nestfuzz_core::state::FIELD_COUNT;
use nestfuzz_core::{
    generate_profile, mutate, parse_directive, reproduce, round, run_campaign, validate, Ablation, BugId, BugSet,
    CampaignConfig, CampaignStats, CapabilityProfile, EntryStatus, Executor, FieldId, FuzzInput, MutationDirective,
    Oracle, OracleConfig, RejectReason, RunConfig, VmState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Line {
    pass: bool,
    hard: bool,
    name: &'static str,
    detail: String,
}

fn line(pass: bool, name: &'static str, detail: String) -> Line {
    Line { pass, hard: true, name, detail }
}

fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}

fn random_profile(rng: &mut ChaCha8Rng) -> CapabilityProfile {
    generate_profile(&rng.random::<[u8; 3]>()).expect("three bytes")
}

fn random_directive(rng: &mut ChaCha8Rng) -> MutationDirective {
    let len = rng.random_range(16..=256);
    let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    parse_directive(&bytes).expect("long enough")
}

fn states(n: usize, seed: u64) -> Vec<VmState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| VmState::random(&mut rng)).collect()
}

fn c1_soundness(states: &[VmState]) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let profiles: Vec<_> = (0..20).map(|_| random_profile(&mut rng)).collect();
    let t = Instant::now();
    let mut bad = 0usize;
    for p in &profiles {
        for s in states {
            if !validate(&round(s, p), p).is_empty() {
                bad += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    line(
        bad == 0 && secs < 30.0,
        "rounding soundness",
        format!("{bad} invalid of {} rounded states, {secs:.1}s", states.len() * profiles.len()),
    )
}

fn c2_idempotence(states: &[VmState]) -> Line {
    let p = CapabilityProfile::full();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut bad = 0usize;
    for (i, s) in states.iter().enumerate() {
        let p = if i % 2 == 0 { p.clone() } else { random_profile(&mut rng) };
        let once = round(s, &p);
        if round(&once, &p) != once {
            bad += 1;
        }
    }
    line(bad == 0, "rounding idempotence", format!("{bad} of {} states changed on second round", states.len()))
}

/// Validator-accepts versus oracle-does-not-reject, plus agreement on the
/// first failing check.
fn disagrees(s: &VmState, p: &CapabilityProfile) -> Option<String> {
    let first = validate(s, p).checks().next();
    let status = Oracle::ready(OracleConfig::new(p.clone()).with_silent_round(false), s).vm_entry(s).status;
    match (first, &status) {
        (None, EntryStatus::Accepted(_)) => None,
        (Some(c), EntryStatus::Rejected(RejectReason::Check(r))) if c == *r => None,
        (f, st) => Some(format!("validator {f:?}, oracle {st:?}")),
    }
}

/// Greedily resets fields to zero while the disagreement persists.
fn shrink(s: &VmState, p: &CapabilityProfile) -> (VmState, String) {
    let mut w = s.clone();
    for i in 0..FIELD_COUNT {
        let f = FieldId(i as u16);
        if w.get(f) == 0 {
            continue;
        }
        let mut t = w.clone();
        t.set(f, 0);
        if disagrees(&t, p).is_some() {
            w = t;
        }
    }
    let why = disagrees(&w, p).unwrap_or_default();
    (w, why)
}

fn c3_differential(states: &[VmState]) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut bad = 0usize;
    let mut accepted = 0usize;
    let mut witness = None;
    for s in states {
        let p = random_profile(&mut rng);
        for s in [s.clone(), round(s, &p)] {
            match disagrees(&s, &p) {
                None => accepted += usize::from(validate(&s, &p).is_empty()),
                Some(_) => {
                    bad += 1;
                    witness.get_or_insert_with(|| shrink(&s, &p));
                }
            }
        }
    }
    if let Some((w, why)) = &witness {
        let set: Vec<_> = (0..FIELD_COUNT)
            .map(|i| FieldId(i as u16))
            .filter(|f| w.get(*f) != 0)
            .map(|f| format!("{}={:#x}", f.name(), w.get(f)))
            .collect();
        println!("    witness: {why}; nonzero fields: {}", set.join(" "));
    }
    line(
        bad == 0,
        "validator/oracle differential",
        format!("{bad} disagreements over {} states ({accepted} accepted)", states.len() * 2),
    )
}

/// Number of (field, bit) pairs toggled an odd number of times.
fn expected_distance(d: &MutationDirective) -> u32 {
    let mut odd = BTreeSet::new();
    for m in &d.fields {
        for &b in &m.bits {
            if !odd.insert((m.field, b)) {
                odd.remove(&(m.field, b));
            }
        }
    }
    odd.len() as u32
}

fn c4_mutation_budget() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut out_of_range, mut bad_zero, mut not_involution, mut mismatch) = (0, 0, 0, 0);
    let mut max = 0;
    for _ in 0..100_000 {
        let s = VmState::random(&mut rng);
        let d = random_directive(&mut rng);
        let m = mutate(&s, &d);
        let dist = s.hamming_distance(&m);
        max = max.max(dist);
        out_of_range += usize::from(dist > 24);
        let want = expected_distance(&d);
        bad_zero += usize::from(dist == 0 && want != 0);
        mismatch += usize::from(dist != want);
        not_involution += usize::from(mutate(&m, &d) != s);
    }
    line(
        out_of_range + bad_zero + not_involution + mismatch == 0,
        "mutation budget",
        format!(
            "max distance {max}, {out_of_range} over budget, {bad_zero} unexplained zeros, {mismatch} parity mismatches, {not_involution} involution failures"
        ),
    )
}

fn c5_straddle() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut pre_bad, mut invalid) = (0usize, 0usize);
    let n = 1000;
    for _ in 0..n {
        let p = random_profile(&mut rng);
        let s = round(&VmState::random(&mut rng), &p);
        pre_bad += usize::from(!validate(&s, &p).is_empty());
        let m = mutate(&s, &random_directive(&mut rng));
        invalid += usize::from(!validate(&m, &p).is_empty());
    }
    let frac = invalid as f64 / n as f64;
    line(
        pre_bad == 0 && frac > 0.5,
        "boundary straddle",
        format!("{:.1}% of mutants invalid, {pre_bad} invalid pre-images", frac * 100.0),
    )
}

fn c6_oracle_soundness() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut ex = Executor::new(RunConfig::default());
    let t = Instant::now();
    let mut crashes = 0usize;
    let mut input = FuzzInput::zeroed();
    for i in 0..1_000_000u64 {
        rng.fill(input.bytes_mut());
        if ex.run_fast(&input, i).1.is_some() {
            crashes += 1;
        }
    }
    line(
        crashes == 0,
        "oracle soundness",
        format!("{crashes} anomalies in 1000000 runs, {:.0}s on one thread", t.elapsed().as_secs_f64()),
    )
}

fn campaign(seed: u64, execs: u64, guided: bool, run: RunConfig, out: Option<&Path>) -> CampaignStats {
    let mut c = CampaignConfig::with_execs(seed, execs);
    c.coverage_guided = guided;
    c.run = run;
    c.out_dir = out.map(Path::to_path_buf);
    run_campaign(&c).expect("campaign")
}

fn c7_rediscovery(guided: &[(CampaignStats, tempfile::TempDir)]) -> Line {
    let mut counts = Vec::new();
    let mut replay_failures = 0usize;
    let mut replays = 0usize;
    let mut per_seed = Vec::new();
    for (stats, dir) in guided {
        let found = stats.bugs_found();
        counts.push(found.len());
        per_seed.push(
            stats.first_hit.iter().map(|(b, at)| format!("{}@{at}", b.short())).collect::<Vec<_>>().join(","),
        );
        for (&bug, &at) in &stats.first_hit {
            let rec = stats.anomalies.iter().find(|a| a.bug == Some(bug) && a.exec_index == at).expect("first record");
            let path = dir.path().join("anomalies").join(format!("{}.bin", rec.file_stem()));
            let a = reproduce(&path, None);
            let b = reproduce(&path, None);
            replays += 1;
            let ok = matches!((&a, &b), (Ok(x), Ok(y))
                if x.reproduced && x.observed == Some(bug) && x.diagnostic == y.diagnostic && y.reproduced);
            replay_failures += usize::from(!ok);
        }
    }
    for (seed, s) in SEEDS.iter().zip(&per_seed) {
        println!("    seed {seed}: {s}");
    }
    let m = median(counts.clone());
    line(
        m == BugId::ALL.len() && replay_failures == 0,
        "bug rediscovery",
        format!("bugs found per seed {counts:?}, median {m}; {replay_failures} of {replays} reproducers failed to replay"),
    )
}

fn c8_ablation() -> Line {
    let arms: [(&str, Ablation); 5] = [
        ("all", Ablation::ALL_ON),
        ("no-configurator", off("configurator")),
        ("no-harness", off("harness")),
        ("no-validator", off("validator")),
        ("all-off", Ablation::ALL_OFF),
    ];
    let medians: Vec<(&str, usize)> = arms
        .iter()
        .map(|(name, a)| {
            let edges =
                SEEDS.iter().map(|&s| campaign(s, 200_000, true, RunConfig::default().with_ablation(*a), None).distinct_edges);
            (*name, median(edges.collect()))
        })
        .collect();
    let all = medians[0].1;
    let none = medians[4].1;
    let ok = medians[1..4].iter().all(|&(_, m)| all > m && m > none);
    let detail = medians.iter().map(|(n, m)| format!("{n} {m}")).collect::<Vec<_>>().join(", ");
    line(ok, "ablation direction", format!("median edges: {detail}"))
}

fn off(stage: &str) -> Ablation {
    let mut a = Ablation::ALL_ON;
    a.disable(stage).expect("known stage");
    a
}

fn c9_hamming() -> Line {
    let a = hamming_experiment(10_000, 7).expect("n >= 2");
    let b = hamming_experiment(10_000, 7).expect("n >= 2");
    let s = a.summaries();
    let mean = |name: &str| s.iter().find(|(n, _)| *n == name).expect("summary").1.mean;
    let (rand, default, pair) = (mean("random_vs_rounded"), mean("default_vs_rounded"), mean("rounded_pairwise"));
    let ok = a == b && rand > pair && pair > 0.0 && default < rand;
    line(
        ok,
        "hamming distribution",
        format!(
            "deterministic {}, means random/rounded {rand:.1}, default/rounded {default:.1}, pairwise {pair:.1} (reference 492.6 / 284.7 / 353)",
            a == b
        ),
    )
}

fn c10_determinism() -> Line {
    let run = RunConfig::default().with_bugs(BugSet::all());
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| {
            let mut c = CampaignConfig::with_execs(10, 100_000);
            c.workers = 2;
            c.run = run;
            c.out_dir = Some(d.path().to_path_buf());
            let stats = run_campaign(&c).expect("campaign");
            let csv = std::fs::read(d.path().join("coverage.csv")).expect("csv");
            let mut files: Vec<_> = std::fs::read_dir(d.path().join("anomalies"))
                .expect("anomalies")
                .map(|e| {
                    let p = e.expect("entry").path();
                    (p.file_name().expect("name").to_owned(), std::fs::read(&p).expect("read"))
                })
                .filter(|(n, _)| n.to_string_lossy().ends_with(".bin"))
                .collect();
            files.sort();
            (csv, files, stats.anomalies.len())
        })
        .collect();
    let same_csv = runs[0].0 == runs[1].0;
    let same_set = runs[0].1 == runs[1].1;
    line(
        same_csv && same_set,
        "determinism",
        format!("coverage.csv identical {same_csv}, anomaly sets identical {same_set} ({} records)", runs[0].2),
    )
}

fn c11_guidance(guided: &[(CampaignStats, tempfile::TempDir)]) -> Line {
    let on = median(guided.iter().map(|(s, _)| s.distinct_edges).collect());
    let off = median(
        SEEDS
            .iter()
            .map(|&s| campaign(s, 1_000_000, false, RunConfig::default().with_bugs(BugSet::all()), None).distinct_edges)
            .collect(),
    );
    let gap = (on as f64 - off as f64).abs() / on.max(off) as f64;
    Line {
        pass: gap < 0.15,
        hard: false,
        name: "coverage-guidance parity",
        detail: format!("median edges guided {on}, unguided {off}, gap {:.1}%", gap * 100.0),
    }
}

fn main() -> ExitCode {
    let t = Instant::now();
    let base = states(10_000, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let diff: Vec<_> = (0..10_000).map(|_| VmState::random(&mut rng)).collect();

    let mut lines = Vec::new();
    let mut emit = |n: usize, l: Line| {
        let tag = match (l.pass, l.hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (reported)",
        };
        println!("{tag} {n:>2} {}: {}", l.name, l.detail);
        lines.push(l);
    };
    emit(1, c1_soundness(&base));
    emit(2, c2_idempotence(&base));
    emit(3, c3_differential(&diff));
    emit(4, c4_mutation_budget());
    emit(5, c5_straddle());
    emit(6, c6_oracle_soundness());
    let guided: Vec<_> = SEEDS
        .iter()
        .map(|&s| {
            let dir = tempfile::tempdir().expect("tempdir");
            let stats = campaign(s, 1_000_000, true, RunConfig::default().with_bugs(BugSet::all()), Some(dir.path()));
            (stats, dir)
        })
        .collect();
    emit(7, c7_rediscovery(&guided));
    emit(8, c8_ablation());
    emit(9, c9_hamming());
    emit(10, c10_determinism());
    emit(11, c11_guidance(&guided));

    let failed = lines.iter().filter(|l| !l.pass && l.hard).count();
    println!("acceptance: {} criteria, {failed} hard failures, {:.0}s", lines.len(), t.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
