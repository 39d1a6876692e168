use jumplab::harnack::{ehi_constant, phi_constant, HarnackBox};
use jumplab::semigroup::{caloric_solve, duhamel_generators, GeneratorId};
use jumplab::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ratio_on_box(values: &[Vec<f64>], fm: &FiniteModel, hbox: &HarnackBox) -> f64 {
    let inner = fm.inner_ball(hbox.radius / 2.0);
    let ((a, b), (c, d)) = hbox.quarter_indices();
    let sup = (a..=b).flat_map(|i| inner.iter().map(move |x| values[i][*x])).fold(f64::NEG_INFINITY, f64::max);
    let inf = (c..=d).flat_map(|i| inner.iter().map(move |x| values[i][*x])).fold(f64::INFINITY, f64::min);
    sup / inf
}

fn setup(r: f64, steps: usize) -> (LatticeModel, FiniteModel, HarnackBox) {
    let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
    let fm = m.truncate(&0.into(), r, BoundaryMode::ExteriorTracked).unwrap();
    (m, fm, HarnackBox::new(0.into(), r, 1.0, 1.0).with_steps(steps))
}

#[test]
fn generator_mixtures_stay_below_constant() {
    let (_, fm, hbox) = setup(4.0, 32);
    let rep = phi_constant(&fm, &hbox).unwrap();
    let fam = duhamel_generators(&fm, &hbox.grid().unwrap(), 1e-13).unwrap();
    let ids = fam.ids();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let picks: Vec<(GeneratorId, f64)> =
            (0..6).map(|_| (ids[rng.random_range(0..ids.len())], rng.random::<f64>())).collect();
        let total: f64 = picks.iter().map(|p| p.1).sum();
        let values: Vec<Vec<f64>> = (0..=hbox.steps)
            .map(|i| (0..fm.len()).map(|x| picks.iter().map(|(id, w)| w / total * fam.value(*id, i, x)).sum()).collect())
            .collect();
        let q = ratio_on_box(&values, &fm, &hbox);
        assert!(!(q > rep.constant + 1e-8), "{q} > {}", rep.constant);
    }
}

#[test]
fn random_caloric_fields_respect_constant() {
    let (_, fm, hbox) = setup(4.0, 32);
    let rep = phi_constant(&fm, &hbox).unwrap();
    let grid = hbox.grid().unwrap();
    let n_ext = fm.exterior.as_ref().unwrap().len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..20 {
        let initial: Vec<f64> = (0..fm.len()).map(|_| if k % 2 == 0 { rng.random::<f64>() } else { 0.0 }).collect();
        let data = ExteriorSchedule {
            values: (0..grid.steps()).map(|_| (0..n_ext).map(|_| rng.random::<f64>().powi(4)).collect()).collect(),
            remainder: (0..grid.steps()).map(|_| rng.random::<f64>()).collect(),
        };
        let field = caloric_solve(&fm, &initial, &data, &grid, 1e-13).unwrap();
        let q = ratio_on_box(&field.values, &fm, &hbox);
        assert!(q <= rep.constant + 1e-8, "{q} > {}", rep.constant);
    }
}

#[test]
fn witness_ratio_is_scale_free() {
    let (_, fm, hbox) = setup(4.0, 32);
    let rep = phi_constant(&fm, &hbox).unwrap();
    let w = rep.witness.unwrap();
    for c in [1e-6, 3.0, 1e6] {
        assert!(((c * w.sup) / (c * w.inf) - rep.max_ratio).abs() <= 1e-12 * rep.max_ratio);
    }
}

#[test]
fn stable_across_radius_and_finite_for_smaller_lambda() {
    let mut cps = Vec::new();
    for r in [8.0, 16.0, 32.0] {
        let (_, fm, hbox) = setup(r, 256);
        cps.push(phi_constant(&fm, &hbox).unwrap().constant);
    }
    let (lo, hi) = cps.iter().fold((f64::INFINITY, 0.0f64), |(a, b), c| (a.min(*c), b.max(*c)));
    assert!(hi / lo <= 2.0, "{cps:?}");
    let m = ModelDescription::polynomial(1, 1.5).build().unwrap();
    let fm = m.truncate(&0.into(), 8.0, BoundaryMode::ExteriorTracked).unwrap();
    for lambda in [1.0, 0.5, 0.25] {
        let hbox = HarnackBox::new(0.into(), 8.0, 1.5, lambda).with_steps(128);
        assert!(phi_constant(&fm, &hbox).unwrap().constant.is_finite());
    }
}

#[test]
fn elliptic_below_parabolic() {
    let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
    for r in [8.0, 16.0] {
        let fm = m.truncate(&0.into(), r, BoundaryMode::ExteriorTracked).unwrap();
        let cp = phi_constant(&fm, &HarnackBox::new(0.into(), r, 1.0, 1.0)).unwrap().constant;
        let w2 = m.truncate(&0.into(), 2.0 * r, BoundaryMode::ExteriorTracked).unwrap();
        let ce = ehi_constant(&w2, &0.into(), r).unwrap().constant;
        assert!(ce <= 1.05 * cp, "{ce} {cp}");
    }
}
