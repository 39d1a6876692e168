//! Parabolic and elliptic Harnack constants from the extreme generators of the nonnegative cone.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{real, Cell, Table};
use crate::model::{BoundaryMode, FiniteModel, LatticeModel, TruncateOptions, Vertex};
use crate::semigroup::{
    caloric_solve, channel_matrix, exterior_of, harmonic_generators, ChannelId, ExteriorSchedule, GeneratorId,
    StepPropagator, TimeGrid,
};

/// Generator values below this at the infimum side count as zero.
pub const FLOOR: f64 = 1e-30;
/// Relative change of `C_P` allowed when the exterior radius doubles.
pub const EXTERIOR_TOLERANCE: f64 = 0.05;
const PROPAGATOR_TOL: f64 = 1e-13;
const CHUNK: usize = 32;

/// `Q = (0,T) x B(x0,R)` with `T = lambda R^alpha`, split into `Q-` and `Q+` on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackBox {
    pub center: Vertex,
    pub radius: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Grid steps on `[0, T]`, a multiple of 4.
    pub steps: usize,
}

impl HarnackBox {
    pub fn new(center: Vertex, radius: f64, alpha: f64, lambda: f64) -> Self {
        HarnackBox { center, radius, alpha, lambda, steps: 256 }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn t_end(&self) -> f64 {
        self.lambda * self.radius.powf(self.alpha)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t_end(), self.steps)
    }

    /// Grid index ranges of `Q-` and `Q+` (inclusive).
    pub fn quarter_indices(&self) -> ((usize, usize), (usize, usize)) {
        let q = self.steps / 4;
        ((q, 2 * q), (3 * q, self.steps))
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidData(format!("lambda {} outside (0,1]", self.lambda)));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() || !(self.alpha > 0.0) {
            return Err(Error::InvalidData("box needs R > 0 and alpha > 0".into()));
        }
        if self.steps == 0 || self.steps % 4 != 0 {
            return Err(Error::InvalidData(format!("{} steps is not a positive multiple of 4", self.steps)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarnackKind {
    Parabolic,
    Elliptic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLabel {
    Caloric(GeneratorId),
    Harmonic(ChannelId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackWitness {
    pub generator: GeneratorLabel,
    /// Exterior vertex of the source channel, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vertex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    pub x1: Vertex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
    pub x2: Vertex,
    #[serde(with = "real")]
    pub sup: f64,
    #[serde(with = "real")]
    pub inf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub kind: HarnackKind,
    pub center: Vertex,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harnack_box: Option<HarnackBox>,
    /// `max(ratio, 1)`.
    #[serde(with = "real")]
    pub constant: f64,
    #[serde(with = "real")]
    pub max_ratio: f64,
    pub witness: Option<HarnackWitness>,
    pub initial_generators: usize,
    pub channels: usize,
    pub generators: usize,
    pub exterior_radius: f64,
    pub steps: usize,
    pub floor: f64,
    pub model_hash: String,
    /// Extremal ratio of every generator.
    #[serde(skip)]
    pub table: Table,
}

/// Per-column extremes over the inner rows.
#[derive(Clone, Copy, Debug)]
struct Extremes {
    max: f64,
    argmax: usize,
    min: f64,
    argmin: usize,
}

fn extremes(block: &DMatrix<f64>, col: usize, rows: &[usize]) -> Extremes {
    let mut e = Extremes { max: f64::NEG_INFINITY, argmax: rows[0], min: f64::INFINITY, argmin: rows[0] };
    for &r in rows {
        let v = block[(r, col)];
        if v > e.max {
            e = Extremes { max: v, argmax: r, ..e };
        }
        if v < e.min {
            e = Extremes { min: v, argmin: r, ..e };
        }
    }
    e
}

/// `stats[k][c]` = extremes of `(E^k B)[inner, c]` for `k = 0..levels`.
fn stream_extremes(e: &DMatrix<f64>, b: &DMatrix<f64>, inner: &[usize], levels: usize) -> Vec<Vec<Extremes>> {
    let cols = b.ncols();
    let starts: Vec<usize> = (0..cols).step_by(CHUNK).collect();
    let chunks: Vec<Vec<Vec<Extremes>>> = starts
        .par_iter()
        .map(|&s| {
            let w = CHUNK.min(cols - s);
            let mut cur = b.columns(s, w).into_owned();
            let mut out = Vec::with_capacity(levels);
            for k in 0..levels {
                if k > 0 {
                    cur = e * &cur;
                }
                out.push((0..w).map(|c| extremes(&cur, c, inner)).collect());
            }
            out
        })
        .collect();
    (0..levels).map(|k| chunks.iter().flat_map(|ch| ch[k].iter().copied()).collect()).collect()
}

fn ratio(sup: f64, inf: f64) -> f64 {
    if sup <= 0.0 {
        0.0
    } else if inf < FLOOR {
        f64::INFINITY
    } else {
        sup / inf
    }
}

fn check_window(model: &FiniteModel, center: &Vertex, radius: f64) -> Result<()> {
    exterior_of(model)?;
    if model.center != *center || !((model.radius - radius).abs() <= 1e-12 * radius.max(1.0)) {
        return Err(Error::InvalidData(format!(
            "window B({}, {}) does not match B({center}, {radius})",
            model.center, model.radius
        )));
    }
    Ok(())
}

struct Candidate {
    ratio: f64,
    witness: HarnackWitness,
}

fn better(a: &Option<Candidate>, r: f64) -> bool {
    // strict improvement only, so the first generator in id order wins ties
    a.as_ref().is_none_or(|c| r > c.ratio || (c.ratio.is_nan() && !r.is_nan()))
}

/// `C_P` of the box: the largest `sup_{Q-} g / inf_{Q+} g` over all extreme generators `g`.
///
/// `model` must be the exterior-tracked window `B(x0, R)` of the box.
pub fn phi_constant(model: &FiniteModel, hbox: &HarnackBox) -> Result<HarnackReport> {
    hbox.validate()?;
    check_window(model, &hbox.center, hbox.radius)?;
    let ext = exterior_of(model)?;
    let grid = hbox.grid()?;
    let m = hbox.steps;
    let h = grid.uniform_step().unwrap();
    let times = grid.times();
    let ((a, b), (c, _)) = hbox.quarter_indices();
    let inner = model.inner_ball(hbox.radius / 2.0);
    let n = model.len();
    let prop = StepPropagator::new(model, h, PROPAGATOR_TOL)?;
    let (channels, phi) = channel_matrix(ext);

    let deltas = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / model.mu[j] } else { 0.0 });
    let dstats = stream_extremes(&prop.e, &deltas, &inner, m + 1);
    // source tables start at lag 1: sstats[k - 1] is lag k
    let sstats = stream_extremes(&prop.e, &(&prop.f * &phi), &inner, m);

    let mut table = Table::new(&["generator", "source", "ratio", "t1", "x1", "t2", "x2"]);
    let mut best: Option<Candidate> = None;
    let mut consider = |id: GeneratorId, source: Option<Vertex>, sup: (f64, usize, usize), inf: (f64, usize, usize)| {
        let r = ratio(sup.0, inf.0);
        let w = HarnackWitness {
            generator: GeneratorLabel::Caloric(id),
            source: source.clone(),
            t1: Some(times[sup.1]),
            x1: model.vertices[sup.2].clone(),
            t2: Some(times[inf.1]),
            x2: model.vertices[inf.2].clone(),
            sup: sup.0,
            inf: inf.0,
        };
        table.push(vec![
            Cell::Text(format!("{id:?}")),
            source.as_ref().map_or(Cell::Text(String::new()), Cell::from),
            r.into(),
            times[sup.1].into(),
            (&w.x1).into(),
            times[inf.1].into(),
            (&w.x2).into(),
        ]);
        if better(&best, r) {
            best = Some(Candidate { ratio: r, witness: w });
        }
    };

    for z in 0..n {
        let mut sup = (f64::NEG_INFINITY, a, inner[0]);
        for (i, row) in dstats.iter().enumerate().take(b + 1).skip(a) {
            if row[z].max > sup.0 {
                sup = (row[z].max, i, row[z].argmax);
            }
        }
        let mut inf = (f64::INFINITY, c, inner[0]);
        for (i, row) in dstats.iter().enumerate().skip(c) {
            if row[z].min < inf.0 {
                inf = (row[z].min, i, row[z].argmin);
            }
        }
        consider(GeneratorId::InitialDelta(z), None, sup, inf);
    }
    for step in 0..m {
        for (col, &channel) in channels.iter().enumerate() {
            let mut sup = (0.0, a, inner[0]);
            for i in a.max(step + 1)..=b {
                let e = sstats[i - step - 1][col];
                if e.max > sup.0 {
                    sup = (e.max, i, e.argmax);
                }
            }
            let mut inf = (0.0, c, inner[0]);
            if step < c {
                inf.0 = f64::INFINITY;
                for i in c..=m {
                    let e = sstats[i - step - 1][col];
                    if e.min < inf.0 {
                        inf = (e.min, i, e.argmin);
                    }
                }
            }
            let source = match channel {
                ChannelId::Exterior(w) => Some(ext.vertices[w].clone()),
                ChannelId::Remainder => None,
            };
            consider(GeneratorId::ExteriorSource { step, channel }, source, sup, inf);
        }
    }
    let best = best.expect("nonempty family");
    Ok(HarnackReport {
        kind: HarnackKind::Parabolic,
        center: hbox.center.clone(),
        radius: hbox.radius,
        harnack_box: Some(hbox.clone()),
        constant: best.ratio.max(1.0),
        max_ratio: best.ratio,
        witness: Some(best.witness),
        initial_generators: n,
        channels: channels.len(),
        generators: n + m * channels.len(),
        exterior_radius: ext.outer_radius,
        steps: m,
        floor: FLOOR,
        model_hash: model.model_hash.clone(),
        table,
    })
}

/// `C_P` at two exterior radii.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiConvergence {
    pub coarse: HarnackReport,
    pub fine: HarnackReport,
    #[serde(with = "real")]
    pub relative_change: f64,
}

/// Runs [`phi_constant`] with exterior radius `lambda_ext R` and `2 lambda_ext R`.
///
/// Fails with `WindowUnconverged` when `C_P` moves by more than [`EXTERIOR_TOLERANCE`].
pub fn phi_constant_converged(model: &LatticeModel, hbox: &HarnackBox, lambda_ext: f64) -> Result<PhiConvergence> {
    let (coarse, fine) = phi_constant_pair(model, hbox, lambda_ext)?;
    let relative_change = (fine.constant - coarse.constant).abs() / coarse.constant;
    if !(relative_change <= EXTERIOR_TOLERANCE) {
        return Err(Error::WindowUnconverged(format!(
            "C_P moved from {} to {} when the exterior radius doubled",
            coarse.constant, fine.constant
        )));
    }
    Ok(PhiConvergence { coarse, fine, relative_change })
}

/// `C_P` with exterior radius `lambda_ext R` and `2 lambda_ext R`, without a verdict.
pub fn phi_constant_pair(
    model: &LatticeModel,
    hbox: &HarnackBox,
    lambda_ext: f64,
) -> Result<(HarnackReport, HarnackReport)> {
    let run = |l: f64| {
        let w = model.truncate_with(
            &hbox.center,
            hbox.radius,
            BoundaryMode::ExteriorTracked,
            &TruncateOptions { lambda_ext: l },
        )?;
        phi_constant(&w, hbox)
    };
    Ok((run(lambda_ext)?, run(2.0 * lambda_ext)?))
}

/// `C_EHI`: the largest `max_{B(x0,R)} h / min_{B(x0,R)} h` over exit-distribution generators
/// of the exterior-tracked window `B(x0, 2R)`.
pub fn ehi_constant(model: &FiniteModel, center: &Vertex, radius: f64) -> Result<HarnackReport> {
    if !(radius > 0.0) {
        return Err(Error::InvalidData(format!("radius {radius} must be positive")));
    }
    check_window(model, center, 2.0 * radius)?;
    let ext = exterior_of(model)?;
    let inner = model.inner_ball(radius);
    let (channels, h) = harmonic_generators(model)?;
    let mut table = Table::new(&["generator", "source", "ratio", "x", "y"]);
    let mut best: Option<Candidate> = None;
    for (col, &channel) in channels.iter().enumerate() {
        let e = extremes(&h, col, &inner);
        let r = ratio(e.max, e.min);
        let source = match channel {
            ChannelId::Exterior(w) => Some(ext.vertices[w].clone()),
            ChannelId::Remainder => None,
        };
        table.push(vec![
            Cell::Text(format!("{channel:?}")),
            source.as_ref().map_or(Cell::Text(String::new()), Cell::from),
            r.into(),
            (&model.vertices[e.argmax]).into(),
            (&model.vertices[e.argmin]).into(),
        ]);
        if better(&best, r) {
            best = Some(Candidate {
                ratio: r,
                witness: HarnackWitness {
                    generator: GeneratorLabel::Harmonic(channel),
                    source,
                    t1: None,
                    x1: model.vertices[e.argmax].clone(),
                    t2: None,
                    x2: model.vertices[e.argmin].clone(),
                    sup: e.max,
                    inf: e.min,
                },
            });
        }
    }
    let best = best.expect("at least the remainder channel");
    Ok(HarnackReport {
        kind: HarnackKind::Elliptic,
        center: center.clone(),
        radius,
        harnack_box: None,
        constant: best.ratio.max(1.0),
        max_ratio: best.ratio,
        witness: Some(best.witness),
        initial_generators: 0,
        channels: channels.len(),
        generators: channels.len(),
        exterior_radius: ext.outer_radius,
        steps: 0,
        floor: FLOOR,
        model_hash: model.model_hash.clone(),
        table,
    })
}

/// `h^-1 P^x(X_{tau_B} in targets, tau_B in (T/2 - h, T/2))` from the caloric problem with data
/// `1_{targets} 1_{(T/2-h, T/2)}(t)`.
pub fn first_jump_density_set(
    model: &FiniteModel,
    targets: &[Vertex],
    t_end: f64,
    h: f64,
    x: &Vertex,
) -> Result<f64> {
    let ext = exterior_of(model)?;
    if !(h > 0.0 && h < t_end / 2.0) {
        return Err(Error::InvalidData(format!("need 0 < h < T/2, got h = {h}, T = {t_end}")));
    }
    let xi = model
        .index_of(x)
        .ok_or_else(|| Error::InvalidData(format!("{x} is not in the window")))?;
    let cols = targets
        .iter()
        .map(|y| ext.index_of(y).ok_or_else(|| Error::ExteriorOutOfRange(y.clone())))
        .collect::<Result<Vec<_>>>()?;
    let grid = TimeGrid::from_times(vec![0.0, t_end / 2.0 - h, t_end / 2.0])?;
    let mut data = ExteriorSchedule::zero(&grid, ext.len());
    for c in cols {
        data.values[1][c] = 1.0;
    }
    let field = caloric_solve(model, &vec![0.0; model.len()], &data, &grid, PROPAGATOR_TOL)?;
    Ok(field.values[2][xi] / h)
}

pub fn first_jump_density(model: &FiniteModel, y0: &Vertex, t_end: f64, h: f64, x: &Vertex) -> Result<f64> {
    first_jump_density_set(model, std::slice::from_ref(y0), t_end, h, x)
}

/// Neville extrapolation of [`first_jump_density`] over the step sizes `hs` to `h = 0`.
pub fn first_jump_density_extrapolated(
    model: &FiniteModel,
    y0: &Vertex,
    t_end: f64,
    hs: &[f64],
    x: &Vertex,
) -> Result<f64> {
    if hs.is_empty() {
        return Err(Error::EmptyGrid("step sizes"));
    }
    let vals = hs
        .iter()
        .map(|h| first_jump_density(model, y0, t_end, *h, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(neville_at_zero(hs, &vals))
}

fn neville_at_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (xs[i + k] * p[i] - xs[i] * p[i + 1]) / (xs[i + k] - xs[i]);
        }
    }
    p[0]
}
