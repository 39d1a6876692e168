use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use jumplab::harnack::{phi_constant, HarnackBox};
use jumplab::semigroup::{expected_exit_time, heat_kernel};
use jumplab::{BoundaryMode, ModelDescription, Source};

fn heat(c: &mut Criterion) {
    let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let fm = m.truncate(&0.into(), 64.0, BoundaryMode::Killed).unwrap();
    let x = 0.into();
    c.bench_function("heat_kernel row, Z B(0,64), t=1", |b| {
        b.iter(|| heat_kernel(&fm, Source::Vertex(&x), black_box(1.0), 1e-12).unwrap())
    });
    c.bench_function("heat_kernel all rows, Z B(0,64), t=10", |b| {
        b.iter(|| heat_kernel(&fm, Source::All, black_box(10.0), 1e-12).unwrap())
    });
    c.bench_function("expected_exit_time, Z B(0,64)", |b| b.iter(|| expected_exit_time(&fm).unwrap()));
}

fn harnack(c: &mut Criterion) {
    let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let fm = m.truncate(&0.into(), 8.0, BoundaryMode::ExteriorTracked).unwrap();
    let hbox = HarnackBox::new(0.into(), 8.0, 1.0, 1.0);
    let mut g = c.benchmark_group("phi");
    g.sample_size(10);
    g.bench_function("phi_constant R=8, 256 steps", |b| b.iter(|| phi_constant(&fm, &hbox).unwrap()));
    g.finish();
}

criterion_group!(benches, heat, harnack);
criterion_main!(benches);
