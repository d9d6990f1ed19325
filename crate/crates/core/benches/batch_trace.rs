use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use glancer::flow::{trace_batch, trace_batch_sequential, IntegratorParams};
use glancer::gcc::GccSampler;
use glancer::geometry::Scenario;

fn batch(c: &mut Criterion) {
    let sc = Scenario::disk_interior(1.0);
    let starts = GccSampler::new(64, 0).starts(&sc).unwrap();
    let p = IntegratorParams::default();
    let mut g = c.benchmark_group("disk_64_starts_t4");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| black_box(trace_batch_sequential(&sc, &starts, 4.0, &p))));
    g.bench_function("parallel", |b| b.iter(|| black_box(trace_batch(&sc, &starts, 4.0, &p))));
    g.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
