use criterion::{criterion_group, criterion_main, Criterion};
use jumplab::montecarlo::sample_exit_time;
use jumplab::{ModelDescription, TrajectorySampler};

fn jumps(c: &mut Criterion) {
    for (label, desc) in [
        ("Z, alpha=1", ModelDescription::polynomial(1, 1.0)),
        ("Z^2, alpha=0.5", ModelDescription::polynomial(2, 0.5)),
        ("ladder, alpha=1.5", ModelDescription::ladder(1.5, vec![16, 256])),
    ] {
        let m = desc.build().unwrap();
        let s = TrajectorySampler::new(&m, 1).unwrap();
        let x = m.origin();
        let mut rng = s.rng(0);
        c.bench_function(&format!("sample_jump {label}"), |b| b.iter(|| s.sample_jump(&x, &mut rng)));
    }
}

fn exits(c: &mut Criterion) {
    let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let s = TrajectorySampler::new(&m, 1).unwrap();
    let x = m.origin();
    let mut g = c.benchmark_group("exit");
    g.sample_size(10);
    g.bench_function("1000 exits from Z B(0,16)", |b| b.iter(|| sample_exit_time(&s, &x, &x, 16.0, 1000).unwrap()));
    g.finish();
}

criterion_group!(benches, jumps, exits);
criterion_main!(benches);
