//! Caloric and harmonic functions with exterior data on a tracked annulus.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{poisson, solve_minus_q, GeneratorView};
use crate::error::{Error, Result};
use crate::model::{BoundaryMode, ExteriorAnnulus, FiniteModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `t_i = T i / m`.
    pub fn uniform(t_end: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyGrid("time grid"));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidData(format!("grid end {t_end}")));
        }
        Ok(TimeGrid { times: (0..=m).map(|i| t_end * i as f64 / m as f64).collect() })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::EmptyGrid("time grid"));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) || !times[times.len() - 1].is_finite() {
            return Err(Error::InvalidData("time grid must start at 0 and increase strictly".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn end(&self) -> f64 {
        self.times[self.steps()]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// Common step when the grid is uniform.
    pub fn uniform_step(&self) -> Option<f64> {
        let h = self.end() / self.steps() as f64;
        (0..self.steps()).all(|i| (self.dt(i) - h).abs() <= 1e-12 * h).then_some(h)
    }

    /// Index of a grid time equal to `t` up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let scale = self.end().max(1.0);
        self.times.iter().position(|s| (s - t).abs() <= 1e-12 * scale)
    }
}

/// Piecewise-constant exterior data: `values[i][w]` and `remainder[i]` on step `[t_i, t_{i+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExteriorSchedule {
    pub values: Vec<Vec<f64>>,
    pub remainder: Vec<f64>,
}

impl ExteriorSchedule {
    pub fn zero(grid: &TimeGrid, n_exterior: usize) -> Self {
        Self::constant(grid, n_exterior, 0.0, 0.0)
    }

    pub fn constant(grid: &TimeGrid, n_exterior: usize, value: f64, remainder: f64) -> Self {
        ExteriorSchedule {
            values: vec![vec![value; n_exterior]; grid.steps()],
            remainder: vec![remainder; grid.steps()],
        }
    }

    /// Samples `f(t, w)` and `rem(t)` at step midpoints.
    pub fn from_fn(
        grid: &TimeGrid,
        ext: &ExteriorAnnulus,
        f: impl Fn(f64, usize) -> f64,
        rem: impl Fn(f64) -> f64,
    ) -> Self {
        let mid = |i: usize| 0.5 * (grid.times[i] + grid.times[i + 1]);
        ExteriorSchedule {
            values: (0..grid.steps()).map(|i| (0..ext.len()).map(|w| f(mid(i), w)).collect()).collect(),
            remainder: (0..grid.steps()).map(|i| rem(mid(i))).collect(),
        }
    }

    fn validate(&self, grid: &TimeGrid, n_exterior: usize) -> Result<()> {
        if self.values.len() != grid.steps() || self.remainder.len() != grid.steps() {
            return Err(Error::DimensionMismatch { expected: grid.steps(), got: self.values.len() });
        }
        for row in &self.values {
            if row.len() != n_exterior {
                return Err(Error::DimensionMismatch { expected: n_exterior, got: row.len() });
            }
        }
        let all = self.values.iter().flatten().chain(&self.remainder);
        for v in all {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidData(format!("exterior value {v} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Exterior channel: a tracked vertex or the aggregate remainder beyond the annulus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelId {
    Exterior(usize),
    Remainder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorId {
    /// `u(0, .) = delta_z / mu_z`, zero exterior data.
    InitialDelta(usize),
    /// Unit data on one channel during grid step `step`, zero initial data.
    ExteriorSource { step: usize, channel: ChannelId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Solve,
    Generator(GeneratorId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaloricField {
    pub times: Vec<f64>,
    /// `values[i][x] = u(t_i, x)` on the window.
    pub values: Vec<Vec<f64>>,
    pub exterior: ExteriorSchedule,
    pub provenance: Provenance,
    /// Bound on the deviation from the exact propagation of the data.
    pub error_bound: f64,
}

impl CaloricField {
    /// Exterior value on the step starting at `t_i`: the prescribed data.
    pub fn exterior_value(&self, i: usize, w: usize) -> f64 {
        self.exterior.values[i][w]
    }
}

/// Exact one-step maps `E = e^{dt Q}` and `F = int_0^dt e^{sQ} ds`.
#[derive(Clone, Debug)]
pub struct StepPropagator {
    pub dt: f64,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// Operator infinity-norm bound on the truncation error of `e` (and `dt` times it for `f`).
    pub tail: f64,
}

impl StepPropagator {
    pub fn new(model: &FiniteModel, dt: f64, tol: f64) -> Result<Self> {
        let view = GeneratorView::new(model);
        let n = model.len();
        if view.lambda == 0.0 {
            return Ok(StepPropagator {
                dt,
                e: DMatrix::identity(n, n),
                f: DMatrix::identity(n, n) * dt,
                tail: 0.0,
            });
        }
        let pois = poisson(view.lambda * dt, tol)?;
        let p = view.dense_p();
        let k = pois.weights.len();
        // survival[j] = P(N > j)
        let mut survival = vec![0.0; k];
        let mut acc = pois.tail;
        for j in (0..k).rev() {
            survival[j] = acc;
            acc += pois.weights[j];
        }
        let mut power = DMatrix::identity(n, n);
        let mut e = DMatrix::zeros(n, n);
        let mut f = DMatrix::zeros(n, n);
        for j in 0..k {
            if j > 0 {
                power = &p * &power;
            }
            e += &power * pois.weights[j];
            f += &power * (survival[j] / view.lambda);
        }
        Ok(StepPropagator { dt, e, f, tail: pois.tail })
    }
}

pub(crate) fn exterior_of(model: &FiniteModel) -> Result<&ExteriorAnnulus> {
    match (&model.exterior, model.mode) {
        (Some(ext), BoundaryMode::ExteriorTracked) => Ok(ext),
        _ => Err(Error::WrongMode("caloric problems need an exterior-tracked window")),
    }
}

/// Channel matrix `Phi`: column `c` is `mu_z^-1 J(z, c)` for `z` in the window.
pub(crate) fn channel_matrix(ext: &ExteriorAnnulus) -> (Vec<ChannelId>, DMatrix<f64>) {
    let n = ext.cross.nrows();
    let m = ext.len();
    let mut phi = DMatrix::zeros(n, m + 1);
    phi.view_mut((0, 0), (n, m)).copy_from(&ext.cross);
    for i in 0..n {
        phi[(i, m)] = ext.remainder[i];
    }
    let mut ids: Vec<ChannelId> = (0..m).map(ChannelId::Exterior).collect();
    ids.push(ChannelId::Remainder);
    (ids, phi)
}

/// Solves `du/dt = Lu` on the window with `u = data` outside, piecewise constant in time.
pub fn caloric_solve(
    model: &FiniteModel,
    initial: &[f64],
    exterior: &ExteriorSchedule,
    grid: &TimeGrid,
    tol: f64,
) -> Result<CaloricField> {
    let ext = exterior_of(model)?;
    let n = model.len();
    if initial.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: initial.len() });
    }
    if initial.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData("initial data must be nonnegative".into()));
    }
    exterior.validate(grid, ext.len())?;
    let mut cache: BTreeMap<u64, StepPropagator> = BTreeMap::new();
    let mut u = DVector::from_column_slice(initial);
    let mut values = vec![initial.to_vec()];
    let mut error_bound = 0.0;
    for i in 0..grid.steps() {
        let dt = grid.dt(i);
        if !cache.contains_key(&dt.to_bits()) {
            cache.insert(dt.to_bits(), StepPropagator::new(model, dt, tol)?);
        }
        let prop = &cache[&dt.to_bits()];
        let data = DVector::from_column_slice(&exterior.values[i]);
        let mut s = &ext.cross * data;
        for x in 0..n {
            s[x] += ext.remainder[x] * exterior.remainder[i];
        }
        error_bound += prop.tail * (u.amax() + dt * s.amax());
        u = &prop.e * &u + &prop.f * &s;
        values.push(u.as_slice().to_vec());
    }
    Ok(CaloricField {
        times: grid.times().to_vec(),
        values,
        exterior: exterior.clone(),
        provenance: Provenance::Solve,
        error_bound,
    })
}

/// Extreme generators of the nonnegative caloric cone on a uniform grid.
///
/// By time translation, the source generator for step `j` at time index `i > j`
/// equals `E^{i-j-1} F Phi_c`, so only one table per channel is stored.
#[derive(Clone, Debug)]
pub struct GeneratorFamily {
    pub grid: TimeGrid,
    pub channels: Vec<ChannelId>,
    pub propagator: StepPropagator,
    mu: Vec<f64>,
    n_exterior: usize,
    /// `E^i`, `i = 0..=m`.
    powers: Vec<DMatrix<f64>>,
    /// `H(k) = E^{k-1} F Phi` for `k = 1..=m` (`H(0) = 0`).
    sources: Vec<DMatrix<f64>>,
}

impl GeneratorFamily {
    pub fn window_len(&self) -> usize {
        self.mu.len()
    }

    pub fn ids(&self) -> Vec<GeneratorId> {
        let mut out: Vec<GeneratorId> = (0..self.window_len()).map(GeneratorId::InitialDelta).collect();
        for step in 0..self.grid.steps() {
            for &channel in &self.channels {
                out.push(GeneratorId::ExteriorSource { step, channel });
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.window_len() + self.grid.steps() * self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn channel_column(&self, c: ChannelId) -> usize {
        match c {
            ChannelId::Exterior(w) => w,
            ChannelId::Remainder => self.n_exterior,
        }
    }

    /// `E^i[x, z] / mu_z`: the initial-delta generator at `z`.
    pub fn delta_value(&self, z: usize, i: usize, x: usize) -> f64 {
        self.powers[i][(x, z)] / self.mu[z]
    }

    /// Source generator of channel column `c` at lag `k = i - j` (zero for `k <= 0`).
    pub fn source_value(&self, c: usize, lag: i64, x: usize) -> f64 {
        if lag <= 0 {
            0.0
        } else {
            self.sources[lag as usize - 1][(x, c)]
        }
    }

    pub fn value(&self, id: GeneratorId, i: usize, x: usize) -> f64 {
        match id {
            GeneratorId::InitialDelta(z) => self.delta_value(z, i, x),
            GeneratorId::ExteriorSource { step, channel } => {
                self.source_value(self.channel_column(channel), i as i64 - step as i64, x)
            }
        }
    }

    /// Materializes one generator as a caloric field.
    pub fn field(&self, id: GeneratorId) -> CaloricField {
        let m = self.grid.steps();
        let values = (0..=m).map(|i| (0..self.window_len()).map(|x| self.value(id, i, x)).collect()).collect();
        let mut exterior = ExteriorSchedule::zero(&self.grid, self.n_exterior);
        if let GeneratorId::ExteriorSource { step, channel } = id {
            match channel {
                ChannelId::Exterior(w) => exterior.values[step][w] = 1.0,
                ChannelId::Remainder => exterior.remainder[step] = 1.0,
            }
        }
        CaloricField {
            times: self.grid.times().to_vec(),
            values,
            exterior,
            provenance: Provenance::Generator(id),
            error_bound: m as f64 * self.propagator.tail * (1.0 / self.mu.iter().copied().fold(f64::INFINITY, f64::min) + self.grid.end()),
        }
    }
}

/// Initial deltas and step sources on every exterior channel, for a uniform grid.
pub fn duhamel_generators(model: &FiniteModel, grid: &TimeGrid, tol: f64) -> Result<GeneratorFamily> {
    let ext = exterior_of(model)?;
    let dt = grid
        .uniform_step()
        .ok_or_else(|| Error::InvalidData("generator families need a uniform grid".into()))?;
    let prop = StepPropagator::new(model, dt, tol)?;
    let (channels, phi) = channel_matrix(ext);
    let m = grid.steps();
    let n = model.len();
    let mut powers = Vec::with_capacity(m + 1);
    powers.push(DMatrix::identity(n, n));
    for i in 1..=m {
        powers.push(&prop.e * &powers[i - 1]);
    }
    let fphi = &prop.f * &phi;
    let sources = (0..m).map(|k| &powers[k] * &fphi).collect();
    Ok(GeneratorFamily {
        grid: grid.clone(),
        channels,
        propagator: prop,
        mu: model.mu.clone(),
        n_exterior: ext.len(),
        powers,
        sources,
    })
}

/// Harmonic function on the window with exterior values `data` and remainder value `remainder`.
pub fn harmonic_extension(model: &FiniteModel, data: &[f64], remainder: f64) -> Result<Vec<f64>> {
    let ext = exterior_of(model)?;
    if data.len() != ext.len() {
        return Err(Error::DimensionMismatch { expected: ext.len(), got: data.len() });
    }
    if data.iter().chain(std::iter::once(&remainder)).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData("exterior data must be nonnegative".into()));
    }
    let s = &ext.cross * DVector::from_column_slice(data);
    let b: Vec<f64> = (0..model.len()).map(|x| s[x] + ext.remainder[x] * remainder).collect();
    solve_minus_q(model, &b)
}

/// `h_c = (-Q)^-1 Phi_c` for every channel: the exit distribution generators.
pub(crate) fn harmonic_generators(model: &FiniteModel) -> Result<(Vec<ChannelId>, DMatrix<f64>)> {
    let ext = exterior_of(model)?;
    let (ids, phi) = channel_matrix(ext);
    let q = GeneratorView::new(model).dense_q();
    let lu = (-q).lu();
    let h = lu
        .solve(&phi)
        .ok_or_else(|| Error::NumericalFailure("singular harmonic system".into()))?;
    Ok((ids, h))
}
