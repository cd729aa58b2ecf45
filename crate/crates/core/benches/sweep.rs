// SPDX-License-Identifier: Apache-2.0

//! Restoration sweep on the synthetic model, serial against rayon.
//! Build with `--no-default-features` to see the parallel arm fall back.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use frametrace::model::synthetic::{shipped_frames, shipped_synthetic_model, synthetic_prompt};
use frametrace::trace::{locate_subject_text, restore_sweep, TraceParams};
use frametrace::Execution;

fn sweep(c: &mut Criterion) {
    let bundle = shipped_synthetic_model();
    let frame = &shipped_frames()[0];
    let tokens = bundle.tokenizer().tokenize(&synthetic_prompt(&frame.name)).unwrap();
    let span = locate_subject_text(&bundle, &tokens, &frame.name, None).unwrap();
    let target = bundle.tokenizer().byte_id(frame.target as u8).unwrap();

    let mut group = c.benchmark_group("restore_sweep");
    group.sample_size(10);
    for samples in [2usize, 10] {
        for exec in [Execution::Serial, Execution::Parallel] {
            let params = TraceParams { n_samples: samples, execution: exec, ..TraceParams::defaults_for(&bundle) };
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), samples), &params, |b, p| {
                b.iter(|| restore_sweep(&bundle, black_box(&tokens), &span, target, p).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
