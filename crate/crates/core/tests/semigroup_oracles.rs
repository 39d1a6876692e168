use jumplab::semigroup::{expected_exit_time, heat_kernel, killed_heat_kernel, GeneratorView};
use jumplab::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn dense_oracle(fm: &FiniteModel, t: f64) -> DMatrix<f64> {
    let q = GeneratorView::new(fm).dense_q();
    let e = (q * t).exp();
    DMatrix::from_fn(fm.len(), fm.len(), |x, y| e[(x, y)] / fm.mu[y])
}

fn ring50() -> LatticeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let labels = (0..50).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    let mut entries = Vec::new();
    for i in 0..50 {
        edges.push((i, (i + 1) % 50));
        entries.push((i, (i + 1) % 50, rng.random_range(0.5..2.0)));
    }
    for k in 0..20 {
        let a = (3 * k) % 50;
        let b = (a + 7 + k) % 50;
        edges.push((a, b));
        entries.push((a, b, rng.random_range(0.05..0.3)));
    }
    let mu = (0..50).map(|_| rng.random_range(0.5..1.5)).collect();
    ModelDescription::explicit(labels, edges, entries).measure(MeasureRule::Explicit { values: mu }).build().unwrap()
}

fn whole(m: &LatticeModel) -> FiniteModel {
    m.truncate(&0.into(), 100.0, BoundaryMode::Reflected).unwrap()
}

#[test]
fn matches_matrix_exponential() {
    let two = ModelDescription::explicit(vec!["a".into(), "b".into()], vec![(0, 1)], vec![(0, 1, 1.5)])
        .measure(MeasureRule::Explicit { values: vec![1.0, 3.0] })
        .build()
        .unwrap();
    let z1 = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let z2 = ModelDescription::polynomial(2, 1.0).build().unwrap();
    let models = [
        whole(&two),
        z1.truncate(&0.into(), 10.0, BoundaryMode::Killed).unwrap(),
        z2.truncate(&[0, 0].into(), 3.0, BoundaryMode::Reflected).unwrap(),
    ];
    for fm in &models {
        assert!(fm.len() <= 50);
        for t in [0.1, 1.0, 10.0] {
            let hk = heat_kernel(fm, Source::All, t, TOL).unwrap();
            let oracle = dense_oracle(fm, t);
            for x in 0..fm.len() {
                for y in 0..fm.len() {
                    assert!((hk.p(x, y) - oracle[(x, y)]).abs() <= 1e-10, "t={t} ({x},{y})");
                }
            }
        }
    }
}

#[test]
fn two_state_closed_form() {
    // rates a = J/mu_0, b = J/mu_1: p_t(0,0) mu_0 = (b + a e^{-(a+b)t}) / (a+b)
    let two = ModelDescription::explicit(vec!["a".into(), "b".into()], vec![(0, 1)], vec![(0, 1, 1.5)])
        .measure(MeasureRule::Explicit { values: vec![1.0, 3.0] })
        .build()
        .unwrap();
    let fm = whole(&two);
    let (a, b) = (1.5, 0.5);
    for t in [0.1, 1.0, 10.0] {
        let hk = heat_kernel(&fm, Source::All, t, TOL).unwrap();
        let stay = (b + a * (-(a + b) * t).exp()) / (a + b);
        assert!((hk.p(0, 0) * 1.0 - stay).abs() < 1e-12);
    }
}

#[test]
fn conservation_symmetry_chapman_kolmogorov() {
    let m = ring50();
    let fm = whole(&m);
    assert_eq!(fm.len(), 50);
    let z1 = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let killed = z1.truncate(&0.into(), 24.0, BoundaryMode::Killed).unwrap();
    for (model, conservative) in [(&fm, true), (&killed, false)] {
        let p = |t| heat_kernel(model, Source::All, t, TOL).unwrap();
        for t in [0.1, 1.0] {
            let hk = p(t);
            for mass in hk.masses(&model.mu) {
                if conservative {
                    assert!((mass - 1.0).abs() <= 1e-9);
                } else {
                    assert!(mass <= 1.0 + 1e-9);
                }
            }
            for x in 0..model.len() {
                for y in 0..model.len() {
                    assert!((hk.p(x, y) - hk.p(y, x)).abs() <= 2e-10);
                }
            }
            for s in [0.1, 1.0] {
                let hs = p(s);
                let hts = p(t + s);
                for x in 0..model.len() {
                    for y in 0..model.len() {
                        let ck: f64 = (0..model.len()).map(|z| hk.p(x, z) * hs.p(z, y) * model.mu[z]).sum();
                        assert!((hts.p(x, y) - ck).abs() <= 3e-10, "t={t} s={s}");
                    }
                }
            }
        }
    }
}

#[test]
fn killed_below_larger_window() {
    let z1 = ModelDescription::polynomial(1, 0.75).build().unwrap();
    let small = z1.truncate(&0.into(), 5.0, BoundaryMode::Killed).unwrap();
    let big = z1.truncate(&0.into(), 20.0, BoundaryMode::Killed).unwrap();
    for t in [0.5, 3.0] {
        let a = killed_heat_kernel(&small, Source::All, t, TOL).unwrap();
        let b = heat_kernel(&big, Source::All, t, TOL).unwrap();
        for (x, vx) in small.vertices.iter().enumerate() {
            for (y, vy) in small.vertices.iter().enumerate() {
                let full = b.p(big.index_of(vx).unwrap(), big.index_of(vy).unwrap());
                assert!(a.p(x, y) <= full + 2.0 * TOL);
            }
        }
    }
}

#[test]
fn short_time_jump_identity() {
    let z1 = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let fm = z1.truncate(&0.into(), 12.0, BoundaryMode::Reflected).unwrap();
    let t = 1e-4;
    let hk = heat_kernel(&fm, Source::All, t, 1e-15).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = rng.random_range(0..fm.len());
        let mut y = rng.random_range(0..fm.len());
        while y == x {
            y = rng.random_range(0..fm.len());
        }
        let j = z1.jump(&fm.vertices[x], &fm.vertices[y]);
        let est = hk.p(x, y) * fm.mu[x] * fm.mu[y] / t;
        assert!((est - j).abs() / j <= 1e-2);
    }
}

#[test]
fn exit_time_is_integrated_mass() {
    let z1 = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let fm = z1.truncate(&0.into(), 2.0, BoundaryMode::Killed).unwrap();
    let x = fm.index_of(&0.into()).unwrap();
    let exact = expected_exit_time(&fm).unwrap()[x];
    // composite Simpson on [0, 40] plus exponential tail estimate
    let n = 2000;
    let end = 40.0;
    let h = end / n as f64;
    let mass = |t: f64| heat_kernel(&fm, Source::Vertex(&0.into()), t, 1e-14).unwrap().masses(&fm.mu)[0];
    let mut sum = mass(0.0) + mass(end);
    for i in 1..n {
        sum += mass(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = sum * h / 3.0;
    assert!(mass(end) < 1e-8);
    assert!((integral - exact).abs() <= 1e-4 * exact, "{integral} {exact}");
}
