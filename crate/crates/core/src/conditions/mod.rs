//! Best-constant sweeps for the named conditions.

mod functional;
mod kernels;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use functional::{
    check_nash, check_poincare, check_weighted_poincare, poincare_ball, rayleigh_quotient, weighted_poincare_ball,
    weighted_rayleigh_quotient, PoincareBall,
};
pub use kernels::{check_exit_time, check_hkp, check_ndlb, check_sb, hkp_bound, hkp_ratio_at};

use crate::error::{Error, Result};
use crate::io::{real, real_map, Table};
use crate::model::{LatticeModel, RowRegion, Vertex};

/// Tuple attaining an extremal ratio.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vertex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vertex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vertex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Witness {
    pub fn pair(x: &Vertex, y: &Vertex) -> Self {
        Witness { x: Some(x.clone()), y: Some(y.clone()), ..Default::default() }
    }

    pub fn ball(center: &Vertex, r: f64) -> Self {
        Witness { center: Some(center.clone()), r: Some(r), ..Default::default() }
    }

    pub fn with_t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    pub fn with_label(mut self, l: impl Into<String>) -> Self {
        self.label = Some(l.into());
        self
    }

    fn cmp_key(&self, o: &Self) -> Ordering {
        self.center
            .cmp(&o.center)
            .then(self.x.cmp(&o.x))
            .then(self.y.cmp(&o.y))
            .then(self.r.partial_cmp(&o.r).unwrap_or(Ordering::Equal))
            .then(self.t.partial_cmp(&o.t).unwrap_or(Ordering::Equal))
            .then(self.label.cmp(&o.label))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantKind {
    /// Supremum over the grid.
    Sup,
    /// Infimum over the grid.
    Inf,
    /// Regression fit.
    Fit,
    /// Lower bound on an unknown optimal constant.
    LowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedConstant {
    #[serde(with = "real")]
    pub value: f64,
    pub kind: ConstantKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

/// Running extremum with lexicographic tie-break on witnesses.
#[derive(Clone, Debug)]
pub struct Extremum {
    kind: ConstantKind,
    best: Option<(f64, Witness)>,
}

impl Extremum {
    pub fn sup() -> Self {
        Extremum { kind: ConstantKind::Sup, best: None }
    }

    pub fn inf() -> Self {
        Extremum { kind: ConstantKind::Inf, best: None }
    }

    pub fn lower_bound() -> Self {
        Extremum { kind: ConstantKind::LowerBound, best: None }
    }

    fn larger_wins(&self) -> bool {
        self.kind != ConstantKind::Inf
    }

    pub fn offer(&mut self, v: f64, w: Witness) {
        if v.is_nan() {
            return;
        }
        let better = match &self.best {
            None => true,
            Some((b, bw)) => {
                let strict = if self.larger_wins() { v > *b } else { v < *b };
                strict || (v == *b && w.cmp_key(bw) == Ordering::Less)
            }
        };
        if better {
            self.best = Some((v, w));
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn finish(self) -> Result<FittedConstant> {
        let (value, w) = self.best.ok_or(Error::EmptyGrid("no admissible grid point"))?;
        Ok(FittedConstant { value, kind: self.kind, witness: Some(w) })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centers: Vec<Vertex>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(Vertex, Vertex)>,
}

/// Optional pass/fail bound on one fitted constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub constant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub grid: SweepGrid,
    pub constants: BTreeMap<String, FittedConstant>,
    /// Derived facts asserted on the output (e.g. the doubling floor).
    #[serde(default)]
    pub checks: BTreeMap<String, bool>,
    #[serde(default, with = "real_map")]
    pub metadata: BTreeMap<String, f64>,
    #[serde(default)]
    pub table: Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

impl ConditionReport {
    pub fn new(condition: &str, alpha: Option<f64>, grid: SweepGrid) -> Self {
        ConditionReport {
            condition: condition.into(),
            alpha,
            grid,
            constants: BTreeMap::new(),
            checks: BTreeMap::new(),
            metadata: BTreeMap::new(),
            table: Table::default(),
            threshold: None,
            passed: None,
        }
    }

    pub fn constant(&self, name: &str) -> f64 {
        self.constants.get(name).map(|c| c.value).unwrap_or(f64::NAN)
    }

    pub fn witness(&self, name: &str) -> Option<&Witness> {
        self.constants.get(name).and_then(|c| c.witness.as_ref())
    }

    fn put(&mut self, name: &str, e: Extremum) -> Result<()> {
        self.constants.insert(name.into(), e.finish()?);
        Ok(())
    }

    fn put_fit(&mut self, name: &str, value: f64) {
        self.constants.insert(name.into(), FittedConstant { value, kind: ConstantKind::Fit, witness: None });
    }

    /// Evaluates the threshold, recording the verdict.
    pub fn with_threshold(mut self, th: Threshold) -> Self {
        let v = self.constant(&th.constant);
        let ok = !v.is_nan() && th.max.is_none_or(|m| v <= m) && th.min.is_none_or(|m| v >= m);
        self.passed = Some(ok);
        self.threshold = Some(th);
        self
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn nonempty<T>(v: &[T], what: &'static str) -> Result<()> {
    if v.is_empty() {
        Err(Error::EmptyGrid(what))
    } else {
        Ok(())
    }
}

/// Volume doubling: `C_V = max V(x,2r)/V(x,r)`, the exponent of `V` in `r`, and the floor `1 + C_V^-4`.
pub fn check_vd(model: &LatticeModel, radii: &[f64], centers: &[Vertex]) -> Result<ConditionReport> {
    nonempty(radii, "radii")?;
    nonempty(centers, "centers")?;
    if radii.iter().any(|r| !(*r >= 1.0)) {
        return Err(Error::InvalidData("doubling radii must be >= 1".into()));
    }
    let mut rep = ConditionReport::new(
        "VD",
        None,
        SweepGrid { centers: centers.to_vec(), radii: radii.to_vec(), ..Default::default() },
    );
    let rows: Vec<(Vertex, f64, f64, f64)> = centers
        .iter()
        .flat_map(|c| radii.iter().map(move |r| (c.clone(), *r)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(c, r)| Ok((c.clone(), r, model.volume(&c, r)?, model.volume(&c, 2.0 * r)?)))
        .collect::<Result<_>>()?;
    let mut cv = Extremum::sup();
    let mut floor = Extremum::inf();
    let mut table = Table::new(&["center", "r", "V(r)", "V(2r)", "ratio"]);
    for (c, r, v1, v2) in &rows {
        let ratio = v2 / v1;
        cv.offer(ratio, Witness::ball(c, *r));
        floor.offer(ratio, Witness::ball(c, *r));
        table.push(vec![c.into(), (*r).into(), (*v1).into(), (*v2).into(), ratio.into()]);
    }
    let c_v = cv.value().unwrap();
    let min_ratio = floor.value().unwrap();
    rep.put("C_V", cv)?;
    rep.put("min_doubling_ratio", floor)?;
    rep.checks.insert("doubling_floor".into(), min_ratio >= 1.0 + c_v.powi(-4));
    // exponent of V in r (first center) and the smallest growth exponent between grid radii
    let c0 = &centers[0];
    let mut sorted: Vec<f64> = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let vols: Vec<f64> = sorted.iter().map(|r| model.volume(c0, *r)).collect::<Result<_>>()?;
    if sorted.len() >= 2 {
        rep.put_fit("volume_exponent", log_log_slope(&sorted, &vols));
        let mut a1 = Extremum::inf();
        for i in 0..sorted.len() {
            for j in i + 1..sorted.len() {
                a1.offer((vols[j] / vols[i]).ln() / (sorted[j] / sorted[i]).ln(), Witness::ball(c0, sorted[i]).with_t(sorted[j]));
            }
        }
        rep.put("alpha_1", a1)?;
    }
    rep.table = table;
    Ok(rep)
}

/// `C_UJ = max J d^alpha V(x,d) / (mu_x mu_y)` and `C_LJ` the minimum.
pub fn check_jump_bounds(model: &LatticeModel, alpha: f64, pairs: &[(Vertex, Vertex)]) -> Result<ConditionReport> {
    nonempty(pairs, "pairs")?;
    let mut rep =
        ConditionReport::new("J", Some(alpha), SweepGrid { pairs: pairs.to_vec(), ..Default::default() });
    let vals: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(x, y)| {
            let d = model.distance(x, y)? as f64;
            if d < 1.0 {
                return Err(Error::InvalidData(format!("pair ({x},{y}) must be distinct")));
            }
            let v = model.volume(x, d)?;
            Ok((d, model.jump(x, y) * d.powf(alpha) * v / (model.mu(x) * model.mu(y))))
        })
        .collect::<Result<_>>()?;
    let mut up = Extremum::sup();
    let mut lo = Extremum::inf();
    let mut table = Table::new(&["x", "y", "d", "ratio"]);
    for ((x, y), (d, ratio)) in pairs.iter().zip(vals) {
        up.offer(ratio, Witness::pair(x, y));
        lo.offer(ratio, Witness::pair(x, y));
        table.push(vec![x.into(), y.into(), d.into(), ratio.into()]);
    }
    rep.put("C_UJ", up)?;
    rep.put("C_LJ", lo)?;
    rep.table = table;
    Ok(rep)
}

/// `J(x,y) V(x,r) / (mu_x sum_{x' in B(x,r)} J(x',y))`.
pub fn ujs_ratio(model: &LatticeModel, x: &Vertex, y: &Vertex, r: f64) -> Result<f64> {
    let ball = model.ball(x, r)?;
    let avg: f64 = ball.iter().map(|z| model.jump(z, y)).sum();
    let v: f64 = ball.iter().map(|z| model.mu(z)).sum();
    Ok(model.jump(x, y) * v / (model.mu(x) * avg))
}

/// UJS, LJS and JS constants over pairs `(x, y)` and radii `1 <= r <= d(x,y)/2`.
///
/// The averaging sum runs over `x'` in `B(x, r)`. JS is `max J(x1,y)/J(x0,y)` for
/// `d(x0,x1) <= d(x0,y)/2`; for `d(x0,x1) <= d(x0,y)/4` it is compared against the
/// composition `c_UJS / c_LJS` times the measure and volume ratios.
pub fn check_ujs_ljs_js(model: &LatticeModel, pairs: &[(Vertex, Vertex)], radii: &[f64]) -> Result<ConditionReport> {
    nonempty(pairs, "pairs")?;
    nonempty(radii, "radii")?;
    let mut rep = ConditionReport::new(
        "JS",
        None,
        SweepGrid { pairs: pairs.to_vec(), radii: radii.to_vec(), ..Default::default() },
    );
    let mut configs = Vec::new();
    for (x, y) in pairs {
        let d = model.distance(x, y)? as f64;
        for &r in radii {
            if r >= 1.0 && r <= d / 2.0 {
                configs.push((x.clone(), y.clone(), r));
            }
        }
    }
    let ratios: Vec<f64> = configs
        .par_iter()
        .map(|(x, y, r)| ujs_ratio(model, x, y, *r))
        .collect::<Result<_>>()?;
    let mut ujs = Extremum::sup();
    let mut ljs = Extremum::inf();
    let mut table = Table::new(&["x", "y", "r", "ratio"]);
    for ((x, y, r), q) in configs.iter().zip(&ratios) {
        ujs.offer(*q, Witness::pair(x, y).with_r(*r));
        ljs.offer(*q, Witness::pair(x, y).with_r(*r));
        table.push(vec![x.into(), y.into(), (*r).into(), (*q).into()]);
    }
    // local non-degeneracy: J(x, y) over neighbours of probed x
    let mut c0 = Extremum::inf();
    let mut starts: Vec<&Vertex> = pairs.iter().map(|p| &p.0).collect();
    starts.sort();
    starts.dedup();
    for x in starts {
        for z in model.ball(x, 1.0)? {
            if &z != x && model.distance(x, &z)? == 1 {
                c0.offer(model.jump(x, &z), Witness::pair(x, &z));
            }
        }
    }
    // JS with the composition cross-check
    let js_rows: Vec<Vec<(f64, Witness, Option<f64>)>> = pairs
        .par_iter()
        .map(|(x0, y)| {
            let d = model.distance(x0, y)? as f64;
            let j0 = model.jump(x0, y);
            let mut out = Vec::new();
            for x1 in model.ball(x0, d / 2.0)? {
                if &x1 == x0 || &x1 == y {
                    continue;
                }
                let q = if j0 > 0.0 { model.jump(&x1, y) / j0 } else if model.jump(&x1, y) > 0.0 { f64::INFINITY } else { 1.0 };
                let d01 = model.distance(x0, &x1)? as f64;
                let predicted = if d >= 4.0 && d01 <= d / 4.0 {
                    let s = d / 4.0;
                    let u = ujs_ratio(model, &x1, y, s)?;
                    let l = ujs_ratio(model, x0, y, 2.0 * s)?;
                    let vr = model.volume(&x1, 2.0 * s)? / model.volume(&x1, s)?;
                    let b1 = model.ball(&x1, s)?;
                    let b0 = model.ball(x0, 2.0 * s)?;
                    // the averaging step needs B(x1, s) inside B(x0, 2s)
                    let inside = b1.iter().all(|z| b0.binary_search(z).is_ok());
                    inside.then(|| u / l * model.mu(&x1) / model.mu(x0) * vr)
                } else {
                    None
                };
                out.push((q, Witness::pair(x0, y).with_label(x1.to_string()), predicted));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut js = Extremum::sup();
    let mut consistent = true;
    let mut worst_slack = Extremum::inf();
    for (q, w, pred) in js_rows.into_iter().flatten() {
        if let Some(p) = pred {
            consistent &= q <= p * (1.0 + 1e-12);
            worst_slack.offer(p / q, w.clone());
        }
        js.offer(q, w);
    }
    if ujs.value().is_some() {
        rep.put("c_UJS", ujs)?;
        rep.put("c_LJS", ljs)?;
    }
    if c0.value().is_some() {
        rep.put("c_0", c0)?;
    }
    if js.value().is_some() {
        rep.put("c_JS", js)?;
    }
    if worst_slack.value().is_some() {
        rep.put("js_composition_slack", worst_slack)?;
        rep.checks.insert("js_within_composition".into(), consistent);
    }
    rep.table = table;
    Ok(rep)
}

/// `c = max R^alpha sum_{y in B(x0,R/2)} J(y, G - B(x0,R)) / mu(B(x0,R/2))`.
pub fn check_boundary_flux(model: &LatticeModel, alpha: f64, balls: &[(Vertex, f64)]) -> Result<ConditionReport> {
    nonempty(balls, "balls")?;
    let mut rep = ConditionReport::new(
        "flux",
        Some(alpha),
        SweepGrid {
            centers: balls.iter().map(|b| b.0.clone()).collect(),
            radii: balls.iter().map(|b| b.1).collect(),
            ..Default::default()
        },
    );
    let vals: Vec<(f64, f64)> = balls
        .par_iter()
        .map(|(x0, r)| {
            let inner = model.ball(x0, r / 2.0)?;
            let mut flux = 0.0;
            let mut bound = 0.0;
            for y in &inner {
                let s = model.kernel_row_sum(y, &RowRegion::OutsideBall { center: x0.clone(), radius: *r })?;
                flux += s.value;
                bound += s.remainder_bound;
            }
            let m: f64 = inner.iter().map(|y| model.mu(y)).sum();
            Ok((r.powf(alpha) * flux / m, bound))
        })
        .collect::<Result<_>>()?;
    let mut c = Extremum::sup();
    let mut table = Table::new(&["center", "R", "c", "tail_bound"]);
    let mut tail = 0.0f64;
    for ((x0, r), (v, b)) in balls.iter().zip(vals) {
        c.offer(v, Witness::ball(x0, *r));
        table.push(vec![x0.into(), (*r).into(), v.into(), b.into()]);
        tail = tail.max(b);
    }
    rep.put("c", c)?;
    rep.metadata.insert("tail_bound".into(), tail);
    rep.table = table;
    Ok(rep)
}

/// `M1(x,r)` and the tail-certified `M2(x,r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSums {
    pub m1: f64,
    pub m2: f64,
    pub m2_bound: f64,
}

pub fn moment_sums(model: &LatticeModel, x: &Vertex, r: f64) -> Result<MomentSums> {
    let mut m1 = 0.0;
    for y in model.ball(x, r)? {
        let d = model.distance(x, &y)? as f64;
        m1 += d * d * model.jump(x, &y);
    }
    let m2 = model.kernel_row_sum(x, &RowRegion::OutsideBall { center: x.clone(), radius: r })?;
    Ok(MomentSums { m1, m2: m2.value, m2_bound: m2.remainder_bound })
}

/// `M2(x, delta r) - M2(x, lambda r)`: jump mass to `delta r < d <= lambda r`.
pub fn annulus_mass(model: &LatticeModel, x: &Vertex, inner: f64, outer: f64) -> Result<f64> {
    let lo = inner.max(0.0).floor() + 1.0;
    Ok(model.kernel_row_sum(x, &RowRegion::Annulus { inner: lo, outer })?.value)
}

/// Moment scaling exponents and the summed annulus-mass constant.
pub fn check_moments(
    model: &LatticeModel,
    alpha: f64,
    x: &Vertex,
    radii: &[f64],
    delta: f64,
    lambda: f64,
) -> Result<ConditionReport> {
    nonempty(radii, "radii")?;
    let mut rep = ConditionReport::new(
        "moments",
        Some(alpha),
        SweepGrid { centers: vec![x.clone()], radii: radii.to_vec(), ..Default::default() },
    );
    let rows: Vec<(MomentSums, f64)> = radii
        .par_iter()
        .map(|&r| {
            let m = moment_sums(model, x, r)?;
            let mut mass = 0.0;
            for z in model.ball(x, r)? {
                mass += annulus_mass(model, &z, delta * r, lambda * r)?;
            }
            Ok((m, mass * r.powf(alpha) / model.volume(x, r)?))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["r", "M1", "M2", "M2_bound", "annulus_c"]);
    let mut c = Extremum::inf();
    for (r, (m, a)) in radii.iter().zip(&rows) {
        table.push(vec![(*r).into(), m.m1.into(), m.m2.into(), m.m2_bound.into(), (*a).into()]);
        c.offer(*a, Witness::ball(x, *r));
    }
    if radii.len() >= 2 {
        rep.put_fit("M1_exponent", log_log_slope(radii, &rows.iter().map(|m| m.0.m1).collect::<Vec<_>>()));
        rep.put_fit("M2_exponent", log_log_slope(radii, &rows.iter().map(|m| m.0.m2).collect::<Vec<_>>()));
    }
    rep.put("annulus_c", c)?;
    rep.metadata.insert("delta".into(), delta);
    rep.metadata.insert("lambda".into(), lambda);
    rep.table = table;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDescription;

    fn z1(alpha: f64) -> LatticeModel {
        ModelDescription::polynomial(1, alpha).build().unwrap()
    }

    #[test]
    fn vd_on_z1_and_z2() {
        let radii: Vec<f64> = (1..=64).map(|r| r as f64).collect();
        let rep = check_vd(&z1(1.0), &radii, &[0.into()]).unwrap();
        // (4r+1)/(2r+1) increases from 5/3 towards 2
        assert!((rep.constant("C_V") - 257.0 / 129.0).abs() < 1e-15);
        assert_eq!(rep.witness("C_V").unwrap().r, Some(64.0));
        assert!((rep.constant("min_doubling_ratio") - 5.0 / 3.0).abs() < 1e-15);
        assert!(rep.checks["doubling_floor"]);
        let z2 = ModelDescription::polynomial(2, 1.0).build().unwrap();
        let rep = check_vd(&z2, &radii, &[[0, 0].into()]).unwrap();
        assert!(rep.constant("C_V") <= 4.0 && rep.constant("C_V") >= 25.0 / 9.0 - 1e-15);
        assert!(matches!(check_vd(&z2, &[], &[[0, 0].into()]), Err(Error::EmptyGrid(_))));
    }

    #[test]
    fn volume_exponent_matches_dimension() {
        let radii: Vec<f64> = (4..=64).map(|r| r as f64).collect();
        for d in 1..=3 {
            let m = ModelDescription::polynomial(d, 1.0).build().unwrap();
            let rep = check_vd(&m, &radii, &[Vertex::origin(d)]).unwrap();
            // least squares of d ln(2r+1) on ln r
            let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
            let ys: Vec<f64> = radii.iter().map(|r| d as f64 * (2.0 * r + 1.0).ln()).collect();
            let (mx, my) = (xs.iter().sum::<f64>() / 61.0, ys.iter().sum::<f64>() / 61.0);
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            assert!((rep.constant("volume_exponent") - cov / var).abs() < 1e-9, "d = {d}");
            assert!((rep.constant("volume_exponent") - d as f64).abs() < 0.07 * d as f64);
        }
    }

    #[test]
    fn jump_bounds_polynomial() {
        let pairs: Vec<(Vertex, Vertex)> = (1..=40).map(|r| (0.into(), r.into())).collect();
        let rep = check_jump_bounds(&z1(1.0), 1.0, &pairs).unwrap();
        assert!(rep.constant("C_LJ") >= 2.0 && rep.constant("C_UJ") <= 3.0);
    }

    #[test]
    fn suppressed_pair_breaks_lj() {
        let m = ModelDescription::polynomial(1, 1.0).suppress(0.into(), 8.into()).build().unwrap();
        let pairs: Vec<(Vertex, Vertex)> = (1..=16).map(|r| (0.into(), r.into())).collect();
        let rep = check_jump_bounds(&m, 1.0, &pairs).unwrap();
        assert_eq!(rep.constant("C_LJ"), 0.0);
        assert_eq!(rep.witness("C_LJ").unwrap(), &Witness::pair(&0.into(), &8.into()));
    }

    #[test]
    fn ljs_local_constant() {
        let pairs = vec![(Vertex::from(0), Vertex::from(16))];
        let rep = check_ujs_ljs_js(&z1(1.0), &pairs, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert_eq!(rep.constant("c_0"), 1.0);
        assert!(rep.constant("c_UJS").is_finite());
        assert!(rep.checks["js_within_composition"]);
    }

    #[test]
    fn moments_closed_form() {
        let m = moment_sums(&z1(1.0), &0.into(), 2.0).unwrap();
        assert!((m.m1 - 4.0).abs() < 1e-15);
    }

    #[test]
    fn flux_is_monotone_in_r() {
        let m = z1(1.0);
        let at = |r: f64| {
            let inner = m.ball(&0.into(), 4.0).unwrap();
            inner
                .iter()
                .map(|y| m.kernel_row_sum(y, &RowRegion::OutsideBall { center: 0.into(), radius: r }).unwrap().value)
                .sum::<f64>()
        };
        assert!(at(8.0) >= at(12.0) && at(12.0) >= at(20.0));
    }

    #[test]
    fn threshold_verdict() {
        let rep = check_vd(&z1(1.0), &[1.0, 2.0], &[0.into()]).unwrap();
        let pass = rep.clone().with_threshold(Threshold { constant: "C_V".into(), max: Some(2.0), min: None });
        assert_eq!(pass.passed, Some(true));
        let fail = rep.with_threshold(Threshold { constant: "C_V".into(), max: Some(1.5), min: None });
        assert_eq!(fail.passed, Some(false));
    }

    #[test]
    fn extremum_tie_break_is_lexicographic() {
        let mut e = Extremum::sup();
        e.offer(2.0, Witness::pair(&5.into(), &1.into()));
        e.offer(2.0, Witness::pair(&3.into(), &9.into()));
        e.offer(1.0, Witness::pair(&0.into(), &0.into()));
        let c = e.finish().unwrap();
        assert_eq!(c.witness.unwrap().x, Some(3.into()));
    }
}
