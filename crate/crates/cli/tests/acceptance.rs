//! Acceptance gate: nine criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use anyhow::Result;
use jumplab::conditions::{check_exit_time, poincare_ball, rayleigh_quotient};
use jumplab::harnack::{phi_constant, HarnackBox};
use jumplab::montecarlo::sample_exit_time;
use jumplab::semigroup::{caloric_solve, duhamel_generators, expected_exit_time, heat_kernel, GeneratorView};
use jumplab::*;
use jumplab_cli::{execute, Experiment, ExperimentConfig, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = (bool, String);

fn two_state() -> LatticeModel {
    ModelDescription::explicit(vec!["a".into(), "b".into()], vec![(0, 1)], vec![(0, 1, 1.5)])
        .measure(MeasureRule::Explicit { values: vec![1.0, 3.0] })
        .build()
        .unwrap()
}

fn z(dim: usize, alpha: f64) -> LatticeModel {
    ModelDescription::polynomial(dim, alpha).build().unwrap()
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

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn semigroup_oracle() -> Result<Verdict> {
    let start = Instant::now();
    let models = [
        two_state().truncate(&0.into(), 10.0, BoundaryMode::Reflected)?,
        z(1, 1.0).truncate(&0.into(), 10.0, BoundaryMode::Killed)?,
        z(2, 1.0).truncate(&[0, 0].into(), 3.0, BoundaryMode::Reflected)?,
    ];
    let mut worst = 0.0f64;
    for fm in &models {
        assert!(fm.len() <= 50);
        let q = GeneratorView::new(fm).dense_q();
        for t in [0.1, 1.0, 10.0] {
            let hk = heat_kernel(fm, Source::All, t, 1e-12)?;
            let e = (&q * t).exp();
            for x in 0..fm.len() {
                for y in 0..fm.len() {
                    worst = worst.max((hk.p(x, y) - e[(x, y)] / fm.mu[y]).abs());
                }
            }
        }
    }
    let el = start.elapsed();
    Ok((worst <= 1e-10 && el < Duration::from_secs(10), format!("max entry error {worst:.2e}, {}", secs(el))))
}

fn conservation_suite() -> Result<Verdict> {
    let ring = ring50().truncate(&0.into(), 100.0, BoundaryMode::Reflected)?;
    let reflected = z(2, 1.0).truncate(&[0, 0].into(), 3.0, BoundaryMode::Reflected)?;
    let killed = z(1, 1.0).truncate(&0.into(), 24.0, BoundaryMode::Killed)?;
    let (mut mass_err, mut sym, mut ck) = (0.0f64, 0.0f64, 0.0f64);
    let mut killed_excess = f64::NEG_INFINITY;
    for (fm, conservative) in [(&ring, true), (&reflected, true), (&killed, false)] {
        let p = |t| heat_kernel(fm, Source::All, t, 1e-12);
        for t in [0.1, 1.0] {
            let hk = p(t)?;
            for m in hk.masses(&fm.mu) {
                if conservative {
                    mass_err = mass_err.max((m - 1.0).abs());
                } else {
                    killed_excess = killed_excess.max(m - 1.0);
                }
            }
            for x in 0..fm.len() {
                for y in 0..fm.len() {
                    sym = sym.max((hk.p(x, y) - hk.p(y, x)).abs());
                }
            }
            for s in [0.1, 1.0] {
                let hs = p(s)?;
                let hts = p(t + s)?;
                for x in 0..fm.len() {
                    for y in 0..fm.len() {
                        let c: f64 = (0..fm.len()).map(|w| hk.p(x, w) * hs.p(w, y) * fm.mu[w]).sum();
                        ck = ck.max((hts.p(x, y) - c).abs());
                    }
                }
            }
        }
    }
    let ok = mass_err <= 1e-9 && killed_excess <= 1e-9 && sym <= 2e-10 && ck <= 3e-10;
    Ok((
        ok,
        format!("mass {mass_err:.1e}, killed excess {killed_excess:.1e}, symmetry {sym:.1e}, Chapman-Kolmogorov {ck:.1e}"),
    ))
}

fn short_time_identity() -> Result<Verdict> {
    let m = z(1, 1.0);
    let fm = m.truncate(&0.into(), 12.0, BoundaryMode::Reflected)?;
    let t = 1e-4;
    let hk = heat_kernel(&fm, Source::All, t, 1e-15)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = rng.random_range(0..fm.len());
        let mut y = rng.random_range(0..fm.len());
        while y == x {
            y = rng.random_range(0..fm.len());
        }
        let j = m.jump(&fm.vertices[x], &fm.vertices[y]);
        worst = worst.max((hk.p(x, y) * fm.mu[x] * fm.mu[y] / t - j).abs() / j);
    }
    Ok((worst <= 1e-2, format!("20 pairs, max relative error {worst:.2e}")))
}

fn exit_time_cross_validation() -> Result<Verdict> {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for alpha in [0.75, 1.0, 1.5] {
        let m = z(1, alpha);
        let fm = m.truncate(&0.into(), 16.0, BoundaryMode::Killed)?;
        let exact = expected_exit_time(&fm)?[fm.index_of(&0.into()).unwrap()];
        let sampler = TrajectorySampler::new(&m, 2024)?;
        let est = sample_exit_time(&sampler, &0.into(), &0.into(), 16.0, 10_000)?;
        let agree = est.agrees_with(exact, 3.0) && est.truncated == 0;
        let slope = check_exit_time(&m, alpha, &[0.into()], &[8.0, 16.0, 32.0, 64.0])?.constant("exponent");
        let fits = (slope - alpha).abs() <= 0.15;
        ok &= agree && fits;
        notes.push(format!(
            "a={alpha}: solve {exact:.3} vs MC {:.3}+-{:.3}, exponent {slope:.3}",
            est.mean, est.std_error
        ));
    }
    let el = start.elapsed();
    ok &= el < Duration::from_secs(300);
    Ok((ok, format!("{}; {}", notes.join("; "), secs(el))))
}

fn random_function(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<f64> {
    match k % 4 {
        0 => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        1 => (0..n).map(|_| if rng.random::<f64>() < 0.2 { rng.random_range(-5.0..5.0) } else { 0.0 }).collect(),
        2 => {
            let cut = rng.random_range(0..n);
            (0..n).map(|i| if i < cut { 1.0 } else { -1.0 } + 1e-3 * rng.random::<f64>()).collect()
        }
        _ => {
            let w = rng.random_range(0.1..3.0);
            (0..n).map(|i| (w * i as f64).sin() + 0.1 * rng.random::<f64>()).collect()
        }
    }
}

fn poincare_exactness() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let suppressed = ModelDescription::polynomial(1, 1.5).suppress(0.into(), 8.into()).build()?;
    let cases: Vec<(LatticeModel, Vertex, f64, f64)> = vec![
        (z(1, 1.0), 0.into(), 2.0, 1.0),
        (z(1, 1.0), 0.into(), 4.0, 1.0),
        (z(1, 1.0), 0.into(), 8.0, 1.0),
        (z(1, 0.5), 3.into(), 6.0, 0.5),
        (z(2, 1.0), [0, 0].into(), 1.0, 1.0),
        (z(2, 1.5), [1, -1].into(), 2.0, 1.5),
        (suppressed, 4.into(), 8.0, 1.5),
    ];
    let mut violations = 0;
    let mut closest = 0.0f64;
    for (m, c, r, alpha) in &cases {
        let pb = poincare_ball(m, c, *r, *alpha)?;
        for k in 0..100 {
            let f = random_function(&mut rng, pb.vertices.len(), k);
            let q = rayleigh_quotient(m, c, *r, *alpha, &f)?;
            if q > pb.constant * (1.0 + 1e-10) {
                violations += 1;
            }
            closest = closest.max(q / pb.constant);
        }
    }
    // two points, mu = (1, 3), J = 1.5: Var / Form is the same for every nonconstant f
    let two = two_state();
    let pb = poincare_ball(&two, &0.into(), 1.0, 1.0)?;
    let (m0, m1, j) = (1.0, 3.0, 1.5);
    let mut brute = 0.0f64;
    for k in 0..=400 {
        let s = -20.0 + 0.1 * k as f64;
        if (s - 1.0f64).abs() < 1e-9 {
            continue;
        }
        let f = [1.0, s];
        let mean = (m0 * f[0] + m1 * f[1]) / (m0 + m1);
        let var = m0 * (f[0] - mean).powi(2) + m1 * (f[1] - mean).powi(2);
        let form = 2.0 * j * (f[0] - f[1]).powi(2);
        brute = brute.max(var / form);
    }
    let closed = m0 * m1 / ((m0 + m1) * 2.0 * j);
    let two_err = (pb.constant - brute).abs().max((pb.constant - closed).abs());
    Ok((
        violations == 0 && two_err <= 1e-10,
        format!(
            "{} balls x 100 functions, {violations} violations, best quotient {closest:.4} of C_Q; two-point error {two_err:.1e}",
            cases.len()
        ),
    ))
}

fn ratio_on_box(values: &[Vec<f64>], inner: &[usize], hbox: &HarnackBox) -> f64 {
    let ((a, b), (c, d)) = hbox.quarter_indices();
    let sup = (a..=b).flat_map(|i| inner.iter().map(move |x| values[i][*x])).fold(f64::NEG_INFINITY, f64::max);
    let inf = (c..=d).flat_map(|i| inner.iter().map(move |x| values[i][*x])).fold(f64::INFINITY, f64::min);
    sup / inf
}

fn harnack_cone() -> Result<Verdict> {
    let m = z(1, 1.0);
    let mut ok = true;
    let mut notes = Vec::new();
    for r in [8.0, 16.0] {
        let start = Instant::now();
        let hbox = HarnackBox::new(0.into(), r, 1.0, 1.0);
        let window = |l: f64| {
            m.truncate_with(&0.into(), r, BoundaryMode::ExteriorTracked, &TruncateOptions { lambda_ext: l })
        };
        let fm = window(4.0)?;
        let cp = phi_constant(&fm, &hbox)?.constant;
        let cp2 = phi_constant(&window(8.0)?, &hbox)?.constant;
        let grid = hbox.grid()?;
        let inner = fm.inner_ball(r / 2.0);
        let n_ext = fm.exterior.as_ref().map_or(0, |e| e.len());
        let fam = duhamel_generators(&fm, &grid, 1e-13)?;
        let ids = fam.ids();
        let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
        let mut worst = 0.0f64;
        for k in 0..100 {
            let q = if k % 2 == 0 {
                let initial: Vec<f64> =
                    (0..fm.len()).map(|_| if k % 4 == 0 { rng.random::<f64>().powi(3) } else { 0.0 }).collect();
                let sparse = rng.random_range(0.05..1.0);
                let data = ExteriorSchedule {
                    values: (0..grid.steps())
                        .map(|_| {
                            (0..n_ext)
                                .map(|_| if rng.random::<f64>() < sparse { rng.random::<f64>().powi(4) } else { 0.0 })
                                .collect()
                        })
                        .collect(),
                    remainder: (0..grid.steps()).map(|_| rng.random::<f64>()).collect(),
                };
                caloric_solve(&fm, &initial, &data, &grid, 1e-13)?.values.clone()
            } else {
                let picks: Vec<_> = (0..rng.random_range(1..8))
                    .map(|_| (ids[rng.random_range(0..ids.len())], rng.random::<f64>()))
                    .collect();
                (0..=hbox.steps)
                    .map(|i| (0..fm.len()).map(|x| picks.iter().map(|(id, w)| w * fam.value(*id, i, x)).sum()).collect())
                    .collect::<Vec<Vec<f64>>>()
            };
            let ratio = ratio_on_box(&q, &inner, &hbox);
            worst = worst.max(ratio);
        }
        let el = start.elapsed();
        let stable = cp2 / cp <= 2.0 && cp / cp2 <= 2.0;
        ok &= worst <= cp + 1e-8 && stable && el < Duration::from_secs(900);
        notes.push(format!("R={r}: C_P {cp:.3} (doubled exterior {cp2:.3}), worst field {worst:.3}, {}", secs(el)));
    }
    Ok((ok, notes.join("; ")))
}

fn run_in(dir: &std::path::Path, mut cfg: ExperimentConfig, name: &str) -> Result<Report> {
    cfg.output = dir.to_path_buf();
    cfg.name = Some(name.into());
    Ok(execute(&cfg)?.0)
}

fn headline(r: &Report, key: &str) -> bool {
    r.headlines.get(key).copied().unwrap_or(false)
}

fn counterexample_suppressed() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let r = run_in(dir.path(), ExperimentConfig::new(Experiment::CexSuppressed), "cex-a")?;
    let mut ok = true;
    let mut notes = Vec::new();
    for radius in [8, 16] {
        let k = format!("R={radius}");
        let c = |s: &str| r.constants[&format!("{k}.{s}")];
        ok &= headline(&r, &format!("{k}.C_LJ_zero_at_pair")) && c("suppressed.jump.C_LJ") == 0.0;
        ok &= c("lhkp_ratio_at_pair") <= 0.01;
        ok &= c("C_P_ratio") <= 2.0 && c("C_EHI_ratio") <= 2.0;
        notes.push(format!(
            "{k}: C_LJ {}, LHKP ratio {:.2e}, C_P ratio {:.3}, C_EHI ratio {:.3}",
            c("suppressed.jump.C_LJ"),
            c("lhkp_ratio_at_pair"),
            c("C_P_ratio"),
            c("C_EHI_ratio")
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn counterexample_ladder() -> Result<Verdict> {
    let start = Instant::now();
    let dir = tempfile::tempdir()?;
    let r = run_in(dir.path(), ExperimentConfig::new(Experiment::CexLadder), "cex-b")?;
    let el = start.elapsed();
    let cuj: Vec<f64> = [16, 64, 256].iter().map(|r1| r.constants[&format!("R1={r1}.jump.C_UJ")]).collect();
    let ok = cuj.windows(2).all(|w| w[1] > w[0])
        && cuj[2] / cuj[0] >= 1.5
        && r.constants["c_1_spread"] <= 2.0
        && r.constants["c_2_spread"] <= 2.0
        && r.constants["hit_lower_margin"] > 0.0
        && headline(&r, "doob_chebyshev_all")
        && el < Duration::from_secs(1800);
    Ok((
        ok,
        format!(
            "C_UJ {:.2}/{:.2}/{:.2} (growth {:.2}), c1 spread {:.3}, c2 spread {:.3}, hit margin {:.3}, Doob/Chebyshev {}, {}",
            cuj[0],
            cuj[1],
            cuj[2],
            cuj[2] / cuj[0],
            r.constants["c_1_spread"],
            r.constants["c_2_spread"],
            r.constants["hit_lower_margin"],
            headline(&r, "doob_chebyshev_all"),
            secs(el)
        ),
    ))
}

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let mut configs = Vec::new();
    let mut sweep = ExperimentConfig::new(Experiment::ConditionsSweep);
    sweep.grid.radii = vec![1.0, 2.0, 4.0];
    sweep.conditions.checks.push("nash".into());
    configs.push(sweep);
    let mut exit = ExperimentConfig::new(Experiment::ExitTime);
    exit.grid.radii = vec![4.0, 8.0];
    exit.monte_carlo.trajectories = 2000;
    exit.seed = 99;
    configs.push(exit);
    let mut heat = ExperimentConfig::new(Experiment::Heat);
    heat.heat.radius = 4.0;
    configs.push(heat);
    let mut pi = ExperimentConfig::new(Experiment::Poincare);
    pi.grid.radii = vec![2.0, 4.0];
    configs.push(pi);
    let mut phi = ExperimentConfig::new(Experiment::Phi);
    phi.grid.radii = vec![4.0];
    phi.harnack.steps = 64;
    phi.harnack.dump_generators = true;
    configs.push(phi);
    let mut ehi = ExperimentConfig::new(Experiment::Ehi);
    ehi.grid.radii = vec![4.0];
    configs.push(ehi);
    configs.push(ExperimentConfig::new(Experiment::CexSuppressed));
    let mut ladder = ExperimentConfig::new(Experiment::CexLadder);
    ladder.monte_carlo.trajectories = 2000;
    configs.push(ladder);
    let mut same = 0;
    for cfg in &configs {
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let mut c = cfg.clone();
            c.output = dir.path().to_path_buf();
            let (_, path) = execute(&c)?;
            bytes.push(std::fs::read(path.join("report.json"))?);
        }
        if bytes[0] == bytes[1] {
            same += 1;
        }
    }
    Ok((same == configs.len(), format!("{same}/{} experiments byte-identical on rerun", configs.len())))
}

fn main() {
    let criteria: [(&str, fn() -> Result<Verdict>); 9] = [
        ("semigroup oracle equivalence", semigroup_oracle),
        ("conservation, symmetry, Chapman-Kolmogorov", conservation_suite),
        ("short-time jump identity", short_time_identity),
        ("exit-time cross-validation", exit_time_cross_validation),
        ("Poincare exactness", poincare_exactness),
        ("Harnack cone soundness", harnack_cone),
        ("counterexample A, suppressed pair", counterexample_suppressed),
        ("counterexample B, ladder", counterexample_ladder),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".into()),
        };
        if !ok {
            failed += 1;
        }
        println!("{} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
