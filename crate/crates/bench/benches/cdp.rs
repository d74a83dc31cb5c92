// SPDX-License-Identifier: Apache-2.0

use cdp_bench::fixture;
use cdp_core::diffusion::standard_normal;
use cdp_core::{auc, Gradients, NoiseDraw, ScoredLabel};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use std::hint::black_box;

fn train_step(c: &mut Criterion) {
    let (model, data) = fixture(64);
    let draw = NoiseDraw {
        t: 50,
        eps: standard_normal(&mut cdp_core::rng::stream(1, "bench"), model.config.dim),
    };
    let mut grads = Gradients::new();
    let mut group = c.benchmark_group("train");
    group.bench_function("forward_backward_one_sample", |b| {
        let mut k = 0;
        b.iter(|| {
            grads.clear();
            k = (k + 1) % data.len();
            black_box(model.accumulate_gradients(&data[k], &draw, 1.0, &mut grads).unwrap())
        })
    });
    group.finish();
}

fn inference(c: &mut Criterion) {
    let (model, data) = fixture(64);
    let mut group = c.benchmark_group("infer");
    for steps in [1usize, 20, 100] {
        let mut m = model.clone();
        m.config.inference_steps = steps;
        group.bench_function(format!("reverse_denoise_{steps}_steps"), |b| {
            let mut k = 0;
            b.iter(|| {
                k = (k + 1) % data.len();
                black_box(m.forward_infer(&data[k]).unwrap().p)
            })
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut r = cdp_core::rng::stream(2, "bench.auc");
    let n = 100_000;
    let scores = standard_normal(&mut r, n);
    let items: Vec<ScoredLabel> = scores
        .iter()
        .enumerate()
        .map(|(k, &s)| ScoredLabel {
            score: s,
            label: u8::from(s + 0.5 * ((k * 7919) % 13) as f64 / 13.0 > 0.8),
            user_id: (k % 5000) as u32,
            request_id: (k / 5) as u64,
        })
        .collect();
    let mut group = c.benchmark_group("metrics");
    group.throughput(Throughput::Elements(n as u64));
    group.bench_function("auc_100k", |b| {
        b.iter_batched(|| items.clone(), |v| black_box(auc(&v)), BatchSize::LargeInput)
    });
    group.bench_function("report_100k", |b| b.iter(|| black_box(cdp_core::MetricReport::compute(&items))));
    group.finish();
}

criterion_group!(benches, train_step, inference, metrics);
criterion_main!(benches);
