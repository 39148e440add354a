use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use mcd_bench::{default_mlp, equal_weight_single, scalar_batch};
use mcd_core::mc::mc_sample;
use mcd_core::nn::{backward_batch, forward_batch};
use mcd_core::theory::enumerate_moments;
use mcd_core::MaskSource;

fn training_step(c: &mut Criterion) {
    let (def, state) = default_mlp(0.2);
    let x = scalar_batch(32);
    let widths = def.dropout_widths();
    let mut src = MaskSource::new(0);
    c.bench_function("mlp forward+backward, batch 32", |b| {
        b.iter(|| {
            let masks = widths.iter().map(|(s, w)| src.draw_factors(s, 32, *w)).collect();
            let tape = forward_batch(&state, &def, x.view(), masks).unwrap();
            let upstream = tape.output().clone();
            backward_batch(&state, &def, &tape, upstream.view()).unwrap()
        })
    });
}

fn monte_carlo(c: &mut Criterion) {
    let (def, state) = equal_weight_single(500, 0.5, 0.04);
    let input = vec![1.0; 500];
    let src = MaskSource::new(1);
    c.bench_function("single-layer K=500, 10^4 samples", |b| {
        b.iter(|| mc_sample(&def, &state, &input, 10_000, &src).unwrap())
    });
}

fn enumeration(c: &mut Criterion) {
    let w = vec![0.1; 16];
    c.bench_function("enumerate 2^16 masks", |b| b.iter(|| enumerate_moments(0.5, &w).unwrap()));
}

criterion_group!(
    name = benches;
    config = Criterion::default()
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(2))
        .sample_size(10);
    targets = training_step, monte_carlo, enumeration
);
criterion_main!(benches);
