//! Parallel vs. sequential throughput of the batch operations.
//!
//! The `*_seq` functions are the always-available reference paths; the
//! undecorated entry points dispatch to rayon when the `parallel` feature
//! (default) is on. Built with `--no-default-features` both sides run the
//! sequential code, which makes the comparison a no-op baseline check.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mlcw_core::analysis::{sample_uniform_weights, sse_sweep, sse_sweep_seq};
use mlcw_core::codec::{
    decode_buffer, decode_buffer_seq, encode_buffer, encode_buffer_seq, SchemeSet,
};
use mlcw_core::memdevice::{
    charge, charge_seq, default_cost_table, inject_faults, inject_faults_seq, FaultSpec,
};
use std::hint::black_box;

const WEIGHTS: usize = 100_000;

fn bench_encode(c: &mut Criterion) {
    let weights = sample_uniform_weights(WEIGHTS, 1);
    let mut group = c.benchmark_group("encode_buffer");
    group.throughput(Throughput::Elements(WEIGHTS as u64));
    for g in [1usize, 16] {
        group.bench_with_input(BenchmarkId::new("seq", g), &g, |b, &g| {
            b.iter(|| encode_buffer_seq(black_box(&weights), g, SchemeSet::all()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dispatch", g), &g, |b, &g| {
            b.iter(|| encode_buffer(black_box(&weights), g, SchemeSet::all()).unwrap())
        });
    }
    group.finish();
}

fn bench_decode(c: &mut Criterion) {
    let weights = sample_uniform_weights(WEIGHTS, 2);
    let buf = encode_buffer(&weights, 4, SchemeSet::all()).unwrap();
    let mut group = c.benchmark_group("decode_buffer");
    group.throughput(Throughput::Elements(WEIGHTS as u64));
    group.bench_function("seq", |b| b.iter(|| decode_buffer_seq(black_box(&buf))));
    group.bench_function("dispatch", |b| b.iter(|| decode_buffer(black_box(&buf))));
    group.finish();
}

fn bench_inject(c: &mut Criterion) {
    let weights = sample_uniform_weights(WEIGHTS, 3);
    let buf = encode_buffer(&weights, 1, SchemeSet::all()).unwrap();
    let spec = FaultSpec::new(0.02, 11).unwrap();
    let mut group = c.benchmark_group("inject_faults");
    group.throughput(Throughput::Elements(8 * WEIGHTS as u64));
    group.bench_function("seq", |b| {
        b.iter(|| inject_faults_seq(black_box(&buf), &spec))
    });
    group.bench_function("dispatch", |b| {
        b.iter(|| inject_faults(black_box(&buf), &spec))
    });
    group.finish();
}

fn bench_charge(c: &mut Criterion) {
    let weights = sample_uniform_weights(WEIGHTS, 4);
    let buf = encode_buffer(&weights, 1, SchemeSet::all()).unwrap();
    let costs = default_cost_table();
    let mut group = c.benchmark_group("charge");
    group.throughput(Throughput::Elements(8 * WEIGHTS as u64));
    group.bench_function("seq", |b| b.iter(|| charge_seq(black_box(&buf), &costs)));
    group.bench_function("dispatch", |b| b.iter(|| charge(black_box(&buf), &costs)));
    group.finish();
}

fn bench_sse_sweep(c: &mut Criterion) {
    const SAMPLES: usize = 65_536;
    let mut group = c.benchmark_group("sse_sweep");
    group.sample_size(20);
    group.throughput(Throughput::Elements(SAMPLES as u64));
    group.bench_function("seq", |b| b.iter(|| sse_sweep_seq(black_box(SAMPLES), 5)));
    group.bench_function("dispatch", |b| b.iter(|| sse_sweep(black_box(SAMPLES), 5)));
    group.finish();
}

criterion_group!(
    benches,
    bench_encode,
    bench_decode,
    bench_inject,
    bench_charge,
    bench_sse_sweep
);
criterion_main!(benches);
