// SPDX-License-Identifier: Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nestfuzz_bench::{inputs, rounded, states};
use nestfuzz_core::{
    mutate, parse_directive, round, validate, CapabilityProfile, Executor, Oracle, OracleConfig, RunConfig,
};

fn validator(c: &mut Criterion) {
    let p = CapabilityProfile::full();
    let raw = states(64, 1);
    let ok = rounded(64, 1, &p);
    let mut i = 0;
    c.bench_function("round", |b| {
        b.iter(|| {
            i = (i + 1) % raw.len();
            round(black_box(&raw[i]), &p)
        })
    });
    c.bench_function("validate_random", |b| {
        b.iter(|| {
            i = (i + 1) % raw.len();
            validate(black_box(&raw[i]), &p)
        })
    });
    c.bench_function("validate_rounded", |b| {
        b.iter(|| {
            i = (i + 1) % ok.len();
            validate(black_box(&ok[i]), &p)
        })
    });
}

fn mutator(c: &mut Criterion) {
    let ok = rounded(64, 2, &CapabilityProfile::full());
    let d = parse_directive(&[3, 94, 0, 5, 1, 2, 3, 4, 5, 109, 0, 2, 8, 10, 88, 0]).unwrap();
    let mut i = 0;
    c.bench_function("mutate", |b| {
        b.iter(|| {
            i = (i + 1) % ok.len();
            mutate(black_box(&ok[i]), &d)
        })
    });
}

fn oracle(c: &mut Criterion) {
    let p = CapabilityProfile::full();
    let ok = rounded(64, 3, &p);
    let cfg = OracleConfig::new(p);
    let mut i = 0;
    c.bench_function("oracle_vm_entry", |b| {
        b.iter_batched(
            || {
                i = (i + 1) % ok.len();
                (Oracle::ready(cfg.clone(), &ok[i]), &ok[i])
            },
            |(mut o, s)| o.vm_entry(black_box(s)),
            BatchSize::SmallInput,
        )
    });
}

fn pipeline(c: &mut Criterion) {
    let ins = inputs(256, 4);
    let mut ex = Executor::new(RunConfig::default());
    let mut i = 0;
    c.bench_function("run_one", |b| {
        b.iter(|| {
            i = (i + 1) % ins.len();
            ex.run_fast(black_box(&ins[i]), i as u64).1.is_some()
        })
    });
}

criterion_group!(benches, validator, mutator, oracle, pipeline);
criterion_main!(benches);
