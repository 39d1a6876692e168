//! Experiment dispatch. Every function here is deterministic given the config.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Result};
use jumplab::conditions::{
    check_boundary_flux, check_exit_time, check_hkp, check_jump_bounds, check_moments, check_nash, check_ndlb,
    check_poincare, check_sb, check_ujs_ljs_js, check_vd, check_weighted_poincare, hkp_ratio_at,
};
use jumplab::harnack::{ehi_constant, phi_constant_pair, HarnackBox, HarnackReport};
use jumplab::io::{heat_kernel_table, real_text};
use jumplab::montecarlo::{hit_before_exit, sample_exit_time, sample_position_sup, TrajectorySampler};
use jumplab::semigroup::{expected_exit_time, heat_kernel, hitting_probability};
use jumplab::{
    BoundaryMode, ConditionReport, KernelSpec, LatticeModel, ModelDescription, Source, Table, TruncateOptions, Vertex,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig};

/// Everything a run produces before it is written out.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub results: BTreeMap<String, Value>,
    pub tables: BTreeMap<String, Table>,
    /// Flattened `section.constant` values, the namespace thresholds refer to.
    pub constants: BTreeMap<String, f64>,
    pub headlines: BTreeMap<String, bool>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn value(&mut self, key: impl Into<String>, v: impl Serialize) -> Result<()> {
        self.results.insert(key.into(), serde_json::to_value(v)?);
        Ok(())
    }

    fn condition(&mut self, key: &str, rep: &ConditionReport) -> Result<()> {
        for (name, c) in &rep.constants {
            self.constants.insert(format!("{key}.{name}"), c.value);
        }
        for (name, ok) in &rep.checks {
            self.headlines.insert(format!("{key}.{name}"), *ok);
        }
        self.tables.insert(key.to_string(), rep.table.clone());
        let mut v = serde_json::to_value(rep)?;
        // the table goes to CSV
        if let Some(obj) = v.as_object_mut() {
            obj.remove("table");
        }
        self.results.insert(key.to_string(), v);
        Ok(())
    }

    fn harnack(&mut self, key: &str, rep: &HarnackReport, dump: bool) -> Result<()> {
        self.constants.insert(format!("{key}.constant"), rep.constant);
        if dump {
            self.tables.insert(format!("{key}.generators"), rep.table.clone());
        }
        self.value(key, rep)
    }

    fn constant(&mut self, key: impl Into<String>, v: f64) {
        self.constants.insert(key.into(), v);
    }

    fn headline(&mut self, key: impl Into<String>, ok: bool) {
        self.headlines.insert(key.into(), ok);
    }
}

/// JSON number, or the text form for non-finite values.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(real_text(v))
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut out = match cfg.experiment {
        Experiment::CexSuppressed => run_cex_suppressed(cfg)?,
        Experiment::CexLadder => run_cex_ladder(cfg)?,
        _ => run_generic(cfg)?,
    };
    out.warnings.splice(0..0, cfg.warnings());
    Ok(out)
}

fn alpha_of(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.conditions
        .alpha
        .or(cfg.model.kernel.alpha())
        .ok_or_else(|| anyhow!("conditions.alpha: the kernel has no index, set one"))
}

fn centers(cfg: &ExperimentConfig, model: &LatticeModel) -> Vec<Vertex> {
    if cfg.grid.centers.is_empty() {
        vec![model.origin()]
    } else {
        cfg.grid.centers.clone()
    }
}

fn pairs(cfg: &ExperimentConfig, model: &LatticeModel) -> Vec<(Vertex, Vertex)> {
    if !cfg.grid.pairs.is_empty() {
        return cfg.grid.pairs.clone();
    }
    match model.explicit_vertices() {
        Some(vs) => vs
            .iter()
            .enumerate()
            .flat_map(|(i, x)| vs[i + 1..].iter().map(move |y| (x.clone(), y.clone())))
            .filter(|(x, y)| model.distance(x, y).is_ok())
            .collect(),
        None => (1..=32).map(|r| (model.origin(), Vertex::axis(model.dim(), r))).collect(),
    }
}

fn balls(cfg: &ExperimentConfig, model: &LatticeModel) -> Vec<(Vertex, f64)> {
    let radii: Vec<f64> = cfg.grid.radii.iter().copied().filter(|r| *r >= 1.0).collect();
    centers(cfg, model).into_iter().flat_map(|c| radii.iter().map(move |r| (c.clone(), *r))).collect()
}

fn max_radius(cfg: &ExperimentConfig) -> f64 {
    cfg.grid.radii.iter().copied().fold(1.0, f64::max)
}

/// Dispatch to one checker or computation.
pub fn run_generic(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = cfg.model.clone().build()?;
    let mut out = Outcome::default();
    match cfg.experiment {
        Experiment::ConditionsSweep => conditions_sweep(cfg, &model, &mut out)?,
        Experiment::Heat => heat(cfg, &model, &mut out)?,
        Experiment::ExitTime => exit_time(cfg, &model, &mut out)?,
        Experiment::Poincare => {
            let alpha = alpha_of(cfg)?;
            let b = balls(cfg, &model);
            out.condition("poincare", &check_poincare(&model, alpha, &b)?)?;
            out.condition("weighted_poincare", &check_weighted_poincare(&model, alpha, &b)?)?;
        }
        Experiment::Phi => {
            let alpha = alpha_of(cfg)?;
            for c in centers(cfg, &model) {
                for &r in &cfg.grid.radii {
                    let hbox = HarnackBox::new(c.clone(), r, alpha, cfg.harnack.lambda).with_steps(cfg.harnack.steps);
                    let (coarse, fine) = phi_constant_pair(&model, &hbox, cfg.harnack.lambda_ext)?;
                    let key = format!("phi[{c} R={r}]");
                    let change = (fine.constant - coarse.constant).abs() / coarse.constant;
                    out.constant(format!("{key}.relative_change"), change);
                    out.headline(format!("{key}.exterior_converged"), change <= jumplab::harnack::EXTERIOR_TOLERANCE);
                    out.harnack(&format!("{key}.coarse"), &coarse, false)?;
                    out.harnack(&key, &fine, cfg.harnack.dump_generators)?;
                }
            }
        }
        Experiment::Ehi => {
            for c in centers(cfg, &model) {
                for &r in &cfg.grid.radii {
                    let w = model.truncate_with(
                        &c,
                        2.0 * r,
                        BoundaryMode::ExteriorTracked,
                        &TruncateOptions { lambda_ext: cfg.harnack.lambda_ext },
                    )?;
                    let rep = ehi_constant(&w, &c, r)?;
                    out.harnack(&format!("ehi[{c} R={r}]"), &rep, cfg.harnack.dump_generators)?;
                }
            }
        }
        Experiment::CexSuppressed | Experiment::CexLadder => unreachable!("handled by run"),
    }
    out.value("model_hash", model.hash())?;
    Ok(out)
}

fn conditions_sweep(cfg: &ExperimentConfig, model: &LatticeModel, out: &mut Outcome) -> Result<()> {
    let alpha = alpha_of(cfg)?;
    let cs = centers(cfg, model);
    let radii: Vec<f64> = cfg.grid.radii.iter().copied().filter(|r| *r >= 1.0).collect();
    let ps = pairs(cfg, model);
    let windows = if cfg.grid.windows.is_empty() {
        vec![4.0 * max_radius(cfg), 8.0 * max_radius(cfg)]
    } else {
        cfg.grid.windows.clone()
    };
    for check in &cfg.conditions.checks {
        let rep = match check.as_str() {
            "vd" => check_vd(model, &radii, &cs)?,
            "jump" => check_jump_bounds(model, alpha, &ps)?,
            "ujs" => check_ujs_ljs_js(model, &ps, &radii)?,
            "flux" => check_boundary_flux(model, alpha, &balls(cfg, model))?,
            "moments" => check_moments(
                model,
                alpha,
                &cs[0],
                &radii,
                cfg.conditions.moment_delta,
                cfg.conditions.moment_lambda,
            )?,
            "poincare" => check_poincare(model, alpha, &balls(cfg, model))?,
            "weighted-poincare" => check_weighted_poincare(model, alpha, &balls(cfg, model))?,
            "nash" => check_nash(
                model,
                alpha,
                cfg.conditions.nash_dimension.unwrap_or(model.dim() as f64),
                cfg.conditions.nash_window,
                cfg.conditions.nash_samples,
                cfg.seed,
            )?,
            "hkp" => {
                let points: Vec<(Vertex, Vertex, f64)> = ps
                    .iter()
                    .flat_map(|(x, y)| cfg.grid.times.iter().map(move |t| (x.clone(), y.clone(), *t)))
                    .collect();
                check_hkp(model, alpha, &cs[0], &windows, &points, cfg.tolerance)?
            }
            "ndlb" => check_ndlb(model, alpha, &cs[0], &radii, &cfg.grid.time_factors, cfg.tolerance)?,
            "sb" => check_sb(model, alpha, &cs[0], &radii, &cfg.grid.time_factors, cfg.tolerance)?,
            "exit-time" => check_exit_time(model, alpha, &cs, &radii)?,
            other => bail!("conditions.checks: unknown check {other:?}"),
        };
        out.condition(&check.replace('-', "_"), &rep)?;
    }
    Ok(())
}

fn heat(cfg: &ExperimentConfig, model: &LatticeModel, out: &mut Outcome) -> Result<()> {
    let center = cfg.heat.center.clone().unwrap_or_else(|| model.origin());
    let fm = model.truncate(&center, cfg.heat.radius, cfg.heat.mode)?;
    let mut rows = Vec::new();
    for (i, &t) in cfg.grid.times.iter().enumerate() {
        let source = match &cfg.heat.source {
            Some(v) => Source::Vertex(v),
            None => Source::All,
        };
        let hk = heat_kernel(&fm, source, t, cfg.tolerance)?;
        let masses = hk.masses(&fm.mu);
        rows.push(json!({
            "t": t,
            "error_bound": num(hk.error_bound),
            "terms": hk.terms,
            "min_mass": num(masses.iter().copied().fold(f64::INFINITY, f64::min)),
            "max_mass": num(masses.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        }));
        out.tables.insert(format!("heat_{i}"), heat_kernel_table(&hk));
    }
    out.value("heat", json!({ "window": fm.len(), "mode": fm.mode, "times": rows }))
}

fn exit_time(cfg: &ExperimentConfig, model: &LatticeModel, out: &mut Outcome) -> Result<()> {
    let alpha = alpha_of(cfg)?;
    let cs = centers(cfg, model);
    let radii: Vec<f64> = cfg.grid.radii.iter().copied().filter(|r| *r >= 1.0).collect();
    out.condition("exit_time", &check_exit_time(model, alpha, &cs, &radii)?)?;
    if cfg.monte_carlo.trajectories == 0 {
        return Ok(());
    }
    let sampler = TrajectorySampler::new(model, cfg.seed)?;
    let start = cfg.monte_carlo.start.clone().unwrap_or_else(|| cs[0].clone());
    let mut rows = Vec::new();
    for &r in &radii {
        let fm = model.truncate(&cs[0], r, BoundaryMode::Killed)?;
        let i = fm.index_of(&start).ok_or_else(|| anyhow!("monte_carlo.start: {start} outside B({}, {r})", cs[0]))?;
        let exact = expected_exit_time(&fm)?[i];
        let est = sample_exit_time(&sampler, &start, &cs[0], r, cfg.monte_carlo.trajectories)?;
        let key = format!("exit_time_mc[R={r}]");
        out.constant(format!("{key}.mean"), est.mean);
        out.constant(format!("{key}.solve"), exact);
        out.headline(format!("{key}.within_3se"), est.agrees_with(exact, 3.0));
        rows.push(json!({ "r": r, "solve": exact, "estimate": est }));
    }
    out.value("exit_time_mc", rows)
}

fn suppressed_pair(d: usize, alpha: f64, r: i64) -> (ModelDescription, Vertex) {
    let y0 = Vertex::axis(d, r);
    (ModelDescription::polynomial(d, alpha).suppress(Vertex::origin(d), y0.clone()), y0)
}

/// Side-by-side checks of the base kernel and the kernel with the jumps `0 <-> y0` removed.
pub fn run_cex_suppressed(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = &cfg.cex_suppressed;
    let d = p.dim;
    let alpha = p.alpha;
    let mut out = Outcome::default();
    let base = ModelDescription { settings: cfg.model.settings, ..ModelDescription::polynomial(d, alpha) }.build()?;
    let origin = Vertex::origin(d);
    for &r in &p.radii {
        let (desc, y0) = suppressed_pair(d, alpha, r);
        let sup = ModelDescription { settings: cfg.model.settings, ..desc }.build()?;
        let rf = r as f64;
        let key = format!("R={r}");
        let mid = Vertex::axis(d, r / 2);
        let jump_pairs: Vec<(Vertex, Vertex)> = (1..=2 * r).map(|k| (origin.clone(), Vertex::axis(d, k))).collect();
        let hkp_points: Vec<(Vertex, Vertex, f64)> =
            p.hkp_times.iter().map(|t| (origin.clone(), y0.clone(), *t)).collect();
        let windows = [p.window_factor / 2.0 * rf, p.window_factor * rf];
        let js_pairs = vec![(origin.clone(), y0.clone()), (origin.clone(), Vertex::axis(d, 1)), (mid.clone(), y0.clone())];
        let js_radii = [1.0, (rf / 4.0).max(1.0), (rf / 2.0).max(1.0)];
        let pi_balls = vec![(mid.clone(), rf / 2.0), (mid.clone(), rf), (origin.clone(), rf)];
        let hbox = HarnackBox::new(mid.clone(), rf, alpha, cfg.harnack.lambda).with_steps(cfg.harnack.steps);

        let mut cp = [0.0; 2];
        let mut ce = [0.0; 2];
        let mut cq = [vec![], vec![]];
        let mut lhkp = [vec![], vec![]];
        let mut lj_witness_ok = false;
        for (k, (label, m)) in [("base", &base), ("suppressed", &sup)].into_iter().enumerate() {
            let pre = format!("{key}.{label}");
            let jb = check_jump_bounds(m, alpha, &jump_pairs)?;
            if k == 1 {
                let w = jb.witness("C_LJ");
                lj_witness_ok = w.is_some_and(|w| w.x.as_ref() == Some(&origin) && w.y.as_ref() == Some(&y0));
            }
            out.condition(&format!("{pre}.jump"), &jb)?;
            let hkp = check_hkp(m, alpha, &origin, &windows, &hkp_points, cfg.tolerance)?;
            for t in &p.hkp_times {
                lhkp[k].push(hkp_ratio_at(&hkp, &origin, &y0, *t).unwrap_or(f64::NAN));
            }
            out.condition(&format!("{pre}.hkp"), &hkp)?;
            out.condition(&format!("{pre}.ujs"), &check_ujs_ljs_js(m, &js_pairs, &js_radii)?)?;
            let pi = check_poincare(m, alpha, &pi_balls)?;
            cq[k] = pi.table.rows.iter().map(|row| row[3].as_f64().unwrap_or(f64::NAN)).collect();
            out.condition(&format!("{pre}.poincare"), &pi)?;
            let (coarse, fine) = phi_constant_pair(m, &hbox, cfg.harnack.lambda_ext)?;
            out.constant(format!("{pre}.phi.coarse_constant"), coarse.constant);
            out.harnack(&format!("{pre}.phi"), &fine, cfg.harnack.dump_generators)?;
            cp[k] = fine.constant;
            let w = m.truncate_with(
                &mid,
                rf,
                BoundaryMode::ExteriorTracked,
                &TruncateOptions { lambda_ext: cfg.harnack.lambda_ext },
            )?;
            let ehi = ehi_constant(&w, &mid, rf / 2.0)?;
            out.harnack(&format!("{pre}.ehi"), &ehi, cfg.harnack.dump_generators)?;
            ce[k] = ehi.constant;
            out.value(format!("{pre}.model_hash"), m.hash())?;
        }
        let c_lj = out.constants[&format!("{key}.suppressed.jump.C_LJ")];
        out.headline(format!("{key}.C_LJ_zero_at_pair"), c_lj == 0.0 && lj_witness_ok);
        let collapse = lhkp[1][0] / lhkp[0][0];
        out.constant(format!("{key}.lhkp_ratio_at_pair"), collapse);
        out.headline(format!("{key}.lhkp_collapse"), collapse <= 0.01);
        let shrinking = lhkp[1].windows(2).all(|w| w[0] <= w[1]);
        out.headline(format!("{key}.lhkp_decreases_as_t_decreases"), shrinking);
        out.constant(format!("{key}.C_P_ratio"), cp[1] / cp[0]);
        out.headline(format!("{key}.C_P_ratio_le_2"), cp[1] / cp[0] <= 2.0);
        out.constant(format!("{key}.C_EHI_ratio"), ce[1] / ce[0]);
        out.headline(format!("{key}.C_EHI_ratio_le_2"), ce[1] / ce[0] <= 2.0);
        let factor = 2f64.powf(d as f64 + alpha + 1.0);
        let pi_ratio = cq[1].iter().zip(&cq[0]).map(|(s, b)| s / b).fold(0.0, f64::max);
        out.constant(format!("{key}.C_Q_ratio"), pi_ratio);
        out.headline(format!("{key}.C_Q_within_midpoint_factor"), pi_ratio <= factor);
        out.value(
            format!("{key}.lhkp_ratios"),
            json!({ "t": p.hkp_times, "base": lhkp[0].iter().map(|v| num(*v)).collect::<Vec<_>>(),
                    "suppressed": lhkp[1].iter().map(|v| num(*v)).collect::<Vec<_>>() }),
        )?;
    }
    out.value("model_hash", base.hash())?;
    Ok(out)
}

fn ladder_component(alpha: f64, r1: i64) -> Result<LatticeModel> {
    Ok(ModelDescription {
        kernel: KernelSpec::LadderSum { alpha, ranges: vec![r1], base: false },
        ..ModelDescription::polynomial(1, alpha)
    }
    .build()?)
}

/// Ladder kernels over several ranges: jump constants, exit times, hitting and Doob bounds.
pub fn run_cex_ladder(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = &cfg.cex_ladder;
    let alpha = p.alpha;
    let n = cfg.monte_carlo.trajectories.max(1);
    let mut out = Outcome::default();
    let origin = Vertex::from(0);
    let mut cuj = Vec::new();
    let mut c1 = Vec::new();
    let mut c2 = Vec::new();
    let mut hit_floor = Vec::new();
    let mut bounds_ok = true;
    let x_hit = Vertex::from((p.hit_radius / 4.0).floor() as i64);
    for &r1 in &p.ranges {
        let key = format!("R1={r1}");
        let m = ModelDescription { settings: cfg.model.settings, ..ModelDescription::ladder(alpha, vec![r1]) }.build()?;
        let pairs: Vec<(Vertex, Vertex)> = (1..=p.pair_max).map(|d| (origin.clone(), Vertex::from(d))).collect();
        let jb = check_jump_bounds(&m, alpha, &pairs)?;
        cuj.push(jb.constant("C_UJ"));
        out.condition(&format!("{key}.jump"), &jb)?;
        let et = check_exit_time(&m, alpha, std::slice::from_ref(&origin), &p.radii)?;
        c1.push(et.constant("c_1"));
        c2.push(et.constant("c_2"));
        out.condition(&format!("{key}.exit_time"), &et)?;

        let sampler = TrajectorySampler::new(&m, cfg.seed)?;
        let hit = hit_before_exit(&sampler, &x_hit, &origin, &origin, p.hit_radius, n)?;
        let exact = hitting_probability(&m, &origin, p.hit_radius, &x_hit, &origin)?;
        hit_floor.push(hit.mean - 3.0 * hit.std_error);
        out.constant(format!("{key}.hit.mean"), hit.mean);
        out.constant(format!("{key}.hit.solve"), exact);
        out.value(format!("{key}.hit"), json!({ "x": x_hit, "estimate": hit, "solve": exact }))?;

        let comp = ladder_component(alpha, r1)?;
        let cs = TrajectorySampler::new(&comp, cfg.seed)?;
        let rf = r1 as f64;
        let ps = sample_position_sup(&cs, rf.powf(alpha) / 4.0, rf, n)?;
        bounds_ok &= ps.within_bounds;
        out.headline(format!("{key}.doob_chebyshev"), ps.within_bounds);
        out.value(format!("{key}.position_sup"), &ps)?;

        let hr = (p.hit_radius / 4.0).max(1.0);
        let w = m.truncate_with(
            &origin,
            2.0 * hr,
            BoundaryMode::ExteriorTracked,
            &TruncateOptions { lambda_ext: cfg.harnack.lambda_ext },
        )?;
        let ehi = ehi_constant(&w, &origin, hr)?;
        out.harnack(&format!("{key}.ehi"), &ehi, cfg.harnack.dump_generators)?;
        out.value(format!("{key}.model_hash"), m.hash())?;
    }
    let spread = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
        hi / lo
    };
    out.headline("C_UJ_increasing", cuj.windows(2).all(|w| w[1] > w[0]));
    let growth = cuj[cuj.len() - 1] / cuj[0];
    out.constant("C_UJ_growth", growth);
    out.headline("C_UJ_growth_ge_1.5", growth >= 1.5);
    out.constant("c_1_spread", spread(&c1));
    out.constant("c_2_spread", spread(&c2));
    out.headline("exit_constants_within_2", spread(&c1) <= 2.0 && spread(&c2) <= 2.0);
    let floor = hit_floor.iter().copied().fold(f64::INFINITY, f64::min);
    out.constant("hit_lower_margin", floor);
    out.headline("hit_bounded_below", floor > 0.0);
    out.headline("doob_chebyshev_all", bounds_ok);
    out.value("model_hash", cfg.model.clone().build()?.hash())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_at_zero_is_identity() {
        let mut cfg = ExperimentConfig::new(Experiment::Heat);
        cfg.grid.times = vec![0.0];
        cfg.heat.radius = 2.0;
        let out = run(&cfg).unwrap();
        let t = &out.tables["heat_0"];
        let v = t.column("value").unwrap();
        let (s, y) = (t.column("source").unwrap(), t.column("vertex").unwrap());
        for row in &t.rows {
            let expect = if row[s] == row[y] { 1.0 } else { 0.0 };
            assert_eq!(row[v].as_f64(), Some(expect));
        }
    }

    #[test]
    fn sweep_fills_constants() {
        let mut cfg = ExperimentConfig::new(Experiment::ConditionsSweep);
        cfg.grid.radii = vec![1.0, 2.0, 4.0];
        let out = run(&cfg).unwrap();
        for k in ["vd.C_V", "jump.C_UJ", "jump.C_LJ", "ujs.c_UJS", "poincare.C_Q", "exit_time.c_1", "moments.annulus_c"] {
            assert!(out.constants.contains_key(k), "{k}");
        }
    }

    #[test]
    fn unknown_check_is_an_error() {
        let mut cfg = ExperimentConfig::new(Experiment::ConditionsSweep);
        cfg.conditions.checks = vec!["vdd".into()];
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn alpha_outside_scope_still_runs() {
        let mut cfg = ExperimentConfig::new(Experiment::ConditionsSweep);
        cfg.model = ModelDescription::polynomial(1, 2.5);
        cfg.grid.radii = vec![1.0, 2.0];
        cfg.grid.times = vec![1.0];
        cfg.grid.pairs = vec![(0.into(), 1.into())];
        cfg.conditions.checks = vec!["hkp".into(), "vd".into()];
        let out = run(&cfg).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.constants.contains_key("hkp.C_2"));
    }
}
