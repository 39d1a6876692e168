//! Heat-kernel and exit-time conditions.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{log_log_slope, nonempty, ConditionReport, Extremum, SweepGrid, Witness};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::model::{BoundaryMode, LatticeModel, Vertex};
use crate::semigroup::{expected_exit_time, heat_kernel, killed_heat_kernel, Source};

/// `V(x, t^{1/alpha})^-1 ∧ t / (V(x,R) R^alpha)` with `R = d(x,y)`.
pub fn hkp_bound(model: &LatticeModel, alpha: f64, x: &Vertex, y: &Vertex, t: f64) -> Result<f64> {
    let on_diag = 1.0 / model.volume(x, t.powf(1.0 / alpha))?;
    let r = model.distance(x, y)? as f64;
    if r == 0.0 {
        return Ok(on_diag);
    }
    Ok(on_diag.min(t / (model.volume(x, r)? * r.powf(alpha))))
}

/// Two-sided heat kernel ratios on killed windows of increasing size.
///
/// The two largest windows must agree to 1% at every probed point.
pub fn check_hkp(
    model: &LatticeModel,
    alpha: f64,
    center: &Vertex,
    windows: &[f64],
    points: &[(Vertex, Vertex, f64)],
    tol: f64,
) -> Result<ConditionReport> {
    nonempty(windows, "windows")?;
    nonempty(points, "points")?;
    let mut windows = windows.to_vec();
    windows.sort_by(f64::total_cmp);
    windows.dedup();
    let used: Vec<f64> = windows[windows.len().saturating_sub(2)..].to_vec();
    let mut keys: BTreeMap<(Vertex, u64), usize> = BTreeMap::new();
    for (x, _, t) in points {
        let n = keys.len();
        keys.entry((x.clone(), t.to_bits())).or_insert(n);
    }
    let key_list: Vec<(Vertex, f64)> = {
        let mut v: Vec<_> = keys.iter().map(|((x, t), i)| (*i, x.clone(), f64::from_bits(*t))).collect();
        v.sort_by_key(|e| e.0);
        v.into_iter().map(|(_, x, t)| (x, t)).collect()
    };
    let mut per_window = Vec::new();
    for &w in &used {
        let fm = model.truncate(center, w, BoundaryMode::Killed)?;
        let rows: Vec<Vec<f64>> = key_list
            .par_iter()
            .map(|(x, t)| Ok(heat_kernel(&fm, Source::Vertex(x), *t, tol)?.values.remove(0)))
            .collect::<Result<_>>()?;
        per_window.push((fm, rows));
    }
    let (big, big_rows) = per_window.last().unwrap();
    let mut rep = ConditionReport::new(
        "HKP",
        Some(alpha),
        SweepGrid {
            centers: vec![center.clone()],
            radii: windows.clone(),
            times: {
                let mut t: Vec<f64> = points.iter().map(|p| p.2).collect();
                t.sort_by(f64::total_cmp);
                t.dedup();
                t
            },
            pairs: points.iter().map(|p| (p.0.clone(), p.1.clone())).collect(),
        },
    );
    let mut c2 = Extremum::sup();
    let mut c1 = Extremum::inf();
    let mut uhd = Extremum::sup();
    let mut change: f64 = 0.0;
    let mut worst = None;
    let mut table = Table::new(&["x", "y", "t", "p", "bound", "ratio"]);
    for (x, y, t) in points {
        let k = keys[&(x.clone(), t.to_bits())];
        let yi = big.index_of(y).ok_or_else(|| Error::InvalidData(format!("{y} outside the window")))?;
        let p = big_rows[k][yi];
        if per_window.len() == 2 {
            let (small, small_rows) = &per_window[0];
            let ys = small.index_of(y).ok_or_else(|| Error::InvalidData(format!("{y} outside the window")))?;
            let rel = (p - small_rows[k][ys]).abs() / p;
            if rel > change {
                change = rel;
                worst = Some((x.clone(), y.clone(), *t));
            }
        }
        let b = hkp_bound(model, alpha, x, y, *t)?;
        let ratio = p / b;
        let w = Witness::pair(x, y).with_t(*t);
        c2.offer(ratio, w.clone());
        c1.offer(ratio, w.clone());
        if x == y {
            uhd.offer(p * model.volume(x, t.powf(1.0 / alpha))?, w);
        }
        table.push(vec![x.into(), y.into(), (*t).into(), p.into(), b.into(), ratio.into()]);
    }
    if change > 0.01 {
        let (x, y, t) = worst.unwrap();
        return Err(Error::WindowUnconverged(format!(
            "p_t({x},{y}) at t = {t} moves by {:.3}% between windows {} and {}",
            100.0 * change,
            used[0],
            used[1]
        )));
    }
    rep.put("C_2", c2)?;
    rep.put("C_1", c1)?;
    if uhd.value().is_some() {
        rep.put("c_UHD", uhd)?;
    }
    rep.metadata.insert("window_change".into(), change);
    rep.metadata.insert("tolerance".into(), tol);
    rep.table = table;
    Ok(rep)
}

/// Pointwise ratio from an HKP report's table.
pub fn hkp_ratio_at(rep: &ConditionReport, x: &Vertex, y: &Vertex, t: f64) -> Option<f64> {
    let (cx, cy, ct, cr) =
        (rep.table.column("x")?, rep.table.column("y")?, rep.table.column("t")?, rep.table.column("ratio")?);
    let (xs, ys) = (x.to_string(), y.to_string());
    rep.table.rows.iter().find_map(|row| {
        let hit = matches!(&row[cx], crate::io::Cell::Text(s) if *s == xs)
            && matches!(&row[cy], crate::io::Cell::Text(s) if *s == ys)
            && row[ct].as_f64() == Some(t);
        if hit {
            row[cr].as_f64()
        } else {
            None
        }
    })
}

fn band_times(alpha: f64, r: f64, factors: &[f64]) -> Vec<f64> {
    factors.iter().map(|f| f * r.powf(alpha)).collect()
}

/// `c_1 = min p^B_t(x', y') V(x, r)` over `x', y'` in `B(x, r/2)` and the time band.
pub fn check_ndlb(
    model: &LatticeModel,
    alpha: f64,
    center: &Vertex,
    radii: &[f64],
    time_factors: &[f64],
    tol: f64,
) -> Result<ConditionReport> {
    nonempty(radii, "radii")?;
    nonempty(time_factors, "time band")?;
    let jobs: Vec<(f64, f64)> = radii
        .iter()
        .flat_map(|&r| band_times(alpha, r, time_factors).into_iter().map(move |t| (r, t)))
        .collect();
    let results: Vec<(f64, Vertex, Vertex)> = jobs
        .par_iter()
        .map(|&(r, t)| {
            let fm = model.truncate(center, r, BoundaryMode::Killed)?;
            let h = killed_heat_kernel(&fm, Source::All, t, tol)?;
            let v = model.volume(center, r)?;
            let inner = fm.inner_ball(r / 2.0);
            let mut e = Extremum::inf();
            for &a in &inner {
                for &b in &inner {
                    e.offer(h.p(a, b) * v, Witness::pair(&fm.vertices[a], &fm.vertices[b]));
                }
            }
            let c = e.finish()?;
            let w = c.witness.unwrap();
            Ok((c.value, w.x.unwrap(), w.y.unwrap()))
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::new(
        "NDLB",
        Some(alpha),
        SweepGrid { centers: vec![center.clone()], radii: radii.to_vec(), times: time_factors.to_vec(), ..Default::default() },
    );
    let mut c1 = Extremum::inf();
    let mut per_r: BTreeMap<u64, f64> = BTreeMap::new();
    let mut table = Table::new(&["r", "t", "x", "y", "min_pV"]);
    for ((r, t), (v, x, y)) in jobs.iter().zip(results) {
        c1.offer(v, Witness::pair(&x, &y).with_r(*r).with_t(*t));
        let e = per_r.entry(r.to_bits()).or_insert(f64::INFINITY);
        *e = e.min(v);
        table.push(vec![(*r).into(), (*t).into(), (&x).into(), (&y).into(), v.into()]);
    }
    rep.put("c_1", c1)?;
    let mins: Vec<f64> = per_r.values().copied().collect();
    let spread = mins.iter().copied().fold(0.0, f64::max) / mins.iter().copied().fold(f64::INFINITY, f64::min);
    rep.metadata.insert("radius_spread".into(), spread);
    rep.table = table;
    Ok(rep)
}

/// `c_1 = max (max_{x,y} p^B_t(x,y)) V(x0, r)` over the time band, with the reflected comparison.
pub fn check_sb(
    model: &LatticeModel,
    alpha: f64,
    center: &Vertex,
    radii: &[f64],
    time_factors: &[f64],
    tol: f64,
) -> Result<ConditionReport> {
    nonempty(radii, "radii")?;
    nonempty(time_factors, "time band")?;
    let jobs: Vec<(f64, f64)> = radii
        .iter()
        .flat_map(|&r| band_times(alpha, r, time_factors).into_iter().map(move |t| (r, t)))
        .collect();
    let results: Vec<(f64, Vertex, Vertex, f64, bool)> = jobs
        .par_iter()
        .map(|&(r, t)| {
            let fm = model.truncate(center, r, BoundaryMode::Killed)?;
            let refl = fm.with_mode(BoundaryMode::Reflected, model)?;
            let hk = killed_heat_kernel(&fm, Source::All, t, tol)?;
            let hr = heat_kernel(&refl, Source::All, t, tol)?;
            let mut e = Extremum::sup();
            let mut dominated = true;
            for a in 0..fm.len() {
                for b in 0..fm.len() {
                    e.offer(hk.p(a, b), Witness::pair(&fm.vertices[a], &fm.vertices[b]));
                    dominated &= hr.p(a, b) >= hk.p(a, b) - 2.0 * tol;
                }
            }
            let refl_sup = hr.values.iter().flatten().copied().fold(0.0, f64::max);
            let c = e.finish()?;
            let w = c.witness.unwrap();
            Ok((c.value * model.volume(center, r)?, w.x.unwrap(), w.y.unwrap(), refl_sup, dominated))
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::new(
        "SB",
        Some(alpha),
        SweepGrid { centers: vec![center.clone()], radii: radii.to_vec(), times: time_factors.to_vec(), ..Default::default() },
    );
    let mut c1 = Extremum::sup();
    let mut dominated = true;
    let mut per_r: BTreeMap<u64, f64> = BTreeMap::new();
    let mut table = Table::new(&["r", "t", "x", "y", "sup_pV", "reflected_sup"]);
    for ((r, t), (v, x, y, rs, dom)) in jobs.iter().zip(results) {
        c1.offer(v, Witness::pair(&x, &y).with_r(*r).with_t(*t));
        dominated &= dom;
        let e = per_r.entry(r.to_bits()).or_insert(0.0);
        *e = e.max(v);
        table.push(vec![(*r).into(), (*t).into(), (&x).into(), (&y).into(), v.into(), rs.into()]);
    }
    rep.put("c_1", c1)?;
    rep.checks.insert("reflected_dominates_killed".into(), dominated);
    let maxs: Vec<f64> = per_r.values().copied().collect();
    let spread = maxs.iter().copied().fold(0.0, f64::max) / maxs.iter().copied().fold(f64::INFINITY, f64::min);
    rep.metadata.insert("radius_spread".into(), spread);
    rep.table = table;
    Ok(rep)
}

/// `c_1 = min E^x tau_{B(x,r)} / r^alpha`, `c_2` the max, and the log-log exponent.
pub fn check_exit_time(model: &LatticeModel, alpha: f64, centers: &[Vertex], radii: &[f64]) -> Result<ConditionReport> {
    nonempty(radii, "radii")?;
    nonempty(centers, "centers")?;
    if radii.iter().any(|r| !(*r >= 1.0)) {
        return Err(Error::InvalidData("exit-time radii must be >= 1".into()));
    }
    let jobs: Vec<(Vertex, f64)> = centers.iter().flat_map(|c| radii.iter().map(move |r| (c.clone(), *r))).collect();
    let times: Vec<f64> = jobs
        .par_iter()
        .map(|(c, r)| {
            let fm = model.truncate(c, *r, BoundaryMode::Killed)?;
            let u = expected_exit_time(&fm)?;
            Ok(u[fm.index_of(c).unwrap()])
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::new(
        "E",
        Some(alpha),
        SweepGrid { centers: centers.to_vec(), radii: radii.to_vec(), ..Default::default() },
    );
    let mut c1 = Extremum::inf();
    let mut c2 = Extremum::sup();
    let mut table = Table::new(&["center", "r", "exit_time", "ratio"]);
    for ((c, r), e) in jobs.iter().zip(&times) {
        let q = e / r.powf(alpha);
        c1.offer(q, Witness::ball(c, *r));
        c2.offer(q, Witness::ball(c, *r));
        table.push(vec![c.into(), (*r).into(), (*e).into(), q.into()]);
    }
    rep.put("c_1", c1)?;
    rep.put("c_2", c2)?;
    if radii.len() >= 2 {
        rep.put_fit("exponent", log_log_slope(radii, &times[..radii.len()]));
    }
    rep.table = table;
    Ok(rep)
}
