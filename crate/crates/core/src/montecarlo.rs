//! Exact trajectories of the jump process on the whole graph.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::real;
use crate::model::tail::{shell_count, shell_polynomial};
use crate::model::{Compiled, KernelSpec, LatticeModel, Metric, Vertex};

/// Shells sampled from the explicit cumulative table.
pub const SHELL_TABLE: u64 = 1 << 16;
pub const STEP_CAP: u64 = 10_000_000;

#[derive(Clone, Debug)]
enum TailLaw {
    /// Radial power law `N(s) s^(-d-alpha)` beyond the table.
    Power { alpha: f64, poly: Vec<f64>, bound: f64 },
    None,
}

#[derive(Clone, Debug)]
enum JumpLaw {
    Radial {
        dim: usize,
        metric: Metric,
        /// `cum[s-1] = sum_{1 <= r <= s} N(r) J(r)`
        cum: Vec<f64>,
        tail: TailLaw,
        tail_mass: f64,
        /// Ladder rungs beyond the table: `(range, 2 w)`.
        far_rungs: Vec<(u64, f64)>,
        suppressed: Option<[Vertex; 2]>,
    },
    Explicit {
        targets: Vec<Vec<usize>>,
        cum: Vec<Vec<f64>>,
    },
}

/// Holding rates and jump laws of the process, with a master seed.
#[derive(Clone, Debug)]
pub struct TrajectorySampler<'a> {
    pub model: &'a LatticeModel,
    pub seed: u64,
    pub step_cap: u64,
    law: JumpLaw,
}

/// Mean of one observable over independent trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: String,
    #[serde(with = "real")]
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    #[serde(with = "real")]
    pub std_error: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Paths stopped by the step cap and left out of the mean.
    pub truncated: usize,
    /// Per-trajectory observables (`None` for capped paths).
    #[serde(skip)]
    pub samples: Vec<Option<f64>>,
}

impl EstimateReport {
    fn from_samples(estimand: impl Into<String>, seed: u64, samples: Vec<Option<f64>>) -> Self {
        let kept: Vec<f64> = samples.iter().flatten().copied().collect();
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let var = if kept.len() > 1 { kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        EstimateReport {
            estimand: estimand.into(),
            mean,
            std_error: (var / n).sqrt(),
            trajectories: samples.len(),
            seed,
            truncated: samples.len() - kept.len(),
            samples,
        }
    }

    /// `|mean - value| <= k SE`, with a floor for zero-variance estimates.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error + 1e-12 * value.abs().max(1.0)
    }
}

fn radial_law(c: &Compiled, suppressed: Option<[Vertex; 2]>, shell_factor: u64) -> Option<JumpLaw> {
    let (dim, metric, tail, far_rungs) = match c {
        Compiled::Radial { alpha, dim, metric, .. } => {
            let poly = shell_polynomial(*dim, *metric);
            (*dim, *metric, power_tail_law(*alpha, poly), vec![])
        }
        Compiled::Ladder { alpha, rungs, base, .. } => {
            let tail = if *base { power_tail_law(*alpha, vec![2.0]) } else { TailLaw::None };
            let far = rungs.iter().filter(|(r, _)| *r as u64 > SHELL_TABLE).map(|(r, w)| (*r as u64, 2.0 * w)).collect();
            (1, Metric::Linf, tail, far)
        }
        Compiled::Suppressed { base, pair } => return radial_law(base, Some(pair.clone()), shell_factor),
        Compiled::Table { .. } => return None,
    };
    let mut cum = Vec::with_capacity(SHELL_TABLE as usize);
    let mut acc = 0.0;
    for s in 1..=SHELL_TABLE {
        acc += shell_count(dim, metric, s) * c.radial_value(s);
        cum.push(acc);
    }
    let tail_mass = match tail {
        TailLaw::Power { .. } => {
            let all = c.radial_outside(SHELL_TABLE, shell_factor).value;
            all - far_rungs.iter().map(|r| r.1).sum::<f64>()
        }
        TailLaw::None => 0.0,
    };
    Some(JumpLaw::Radial { dim, metric, cum, tail, tail_mass, far_rungs, suppressed })
}

fn power_tail_law(alpha: f64, poly: Vec<f64>) -> TailLaw {
    // N(s) / s^(d-1) <= sum |a_k| S^(k-d+1) for s > S
    let d = poly.len() as i32;
    let s = SHELL_TABLE as f64;
    let bound = poly.iter().enumerate().map(|(k, a)| a.abs() * s.powi(k as i32 - d + 1)).sum();
    TailLaw::Power { alpha, poly, bound }
}

/// Shell `s > S` with probability proportional to `N(s) s^(-d-alpha)`.
fn sample_power_tail(alpha: f64, poly: &[f64], bound: f64, rng: &mut ChaCha8Rng) -> u64 {
    let s0 = SHELL_TABLE as f64;
    let d = poly.len() as i32;
    loop {
        // continuous Pareto on (S, inf) with density ~ x^(-1-alpha); shell = ceil(x)
        let u: f64 = 1.0 - rng.random::<f64>();
        let x = s0 * u.powf(-1.0 / alpha);
        if !(x < 9.0e18) {
            continue;
        }
        let s = (x.ceil() as u64).max(SHELL_TABLE + 1);
        let sf = s as f64;
        let n = poly.iter().enumerate().map(|(k, a)| a * sf.powi(k as i32)).sum::<f64>();
        let target = n * sf.powf(-(d as f64) - alpha);
        let proposal = ((sf - 1.0).powf(-alpha) - sf.powf(-alpha)) / alpha;
        if rng.random::<f64>() * bound * proposal <= target {
            return s;
        }
    }
}

/// Uniform point at distance exactly `s` from the origin.
fn sample_on_shell(dim: usize, metric: Metric, s: u64, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let si = s as i64;
    if dim == 1 {
        return vec![if rng.random::<bool>() { si } else { -si }];
    }
    match metric {
        Metric::Linf => loop {
            let face = rng.random_range(0..dim);
            let mut p: Vec<i64> = (0..dim).map(|_| rng.random_range(-si..=si)).collect();
            p[face] = if rng.random::<bool>() { si } else { -si };
            let mult = p.iter().filter(|c| c.unsigned_abs() == s).count();
            if rng.random_range(0..mult) == 0 {
                return p;
            }
        },
        Metric::L1 => {
            // number of nonzero coordinates k with weight 2^k C(d,k) C(s-1,k-1)
            let weights: Vec<f64> = (1..=dim.min(s as usize))
                .map(|k| 2f64.powi(k as i32) * binom(dim as u64, k as u64) * binom(s - 1, k as u64 - 1))
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut k = weights.len();
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    k = i + 1;
                    break;
                }
                u -= w;
            }
            let coords = rand::seq::index::sample(rng, dim, k).into_vec();
            let mut cuts = BTreeSet::new();
            // Floyd's sampling of k-1 distinct cut points in 1..s
            let m = s - 1;
            for j in (m + 1 - (k as u64 - 1))..=m {
                let t = rng.random_range(1..=j);
                if !cuts.insert(t) {
                    cuts.insert(j);
                }
            }
            let mut parts = Vec::with_capacity(k);
            let mut prev = 0;
            for c in cuts.iter().chain(std::iter::once(&s)) {
                parts.push((c - prev) as i64);
                prev = *c;
            }
            let mut p = vec![0i64; dim];
            for (c, part) in coords.into_iter().zip(parts) {
                p[c] = if rng.random::<bool>() { part } else { -part };
            }
            p
        }
    }
}

fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl<'a> TrajectorySampler<'a> {
    pub fn new(model: &'a LatticeModel, seed: u64) -> Result<Self> {
        let law = match model.explicit_vertices() {
            None => radial_law(model.compiled(), None, model.settings().shell_factor)
                .ok_or_else(|| Error::InvalidModel("lattice kernel is not radial".into()))?,
            Some(vs) => {
                let mut targets = Vec::with_capacity(vs.len());
                let mut cum = Vec::with_capacity(vs.len());
                for x in &vs {
                    let mut t = Vec::new();
                    let mut c = Vec::new();
                    let mut acc = 0.0;
                    for (j, y) in vs.iter().enumerate() {
                        let w = model.jump(x, y);
                        if w > 0.0 {
                            acc += w;
                            t.push(j);
                            c.push(acc);
                        }
                    }
                    targets.push(t);
                    cum.push(c);
                }
                JumpLaw::Explicit { targets, cum }
            }
        };
        Ok(TrajectorySampler { model, seed, step_cap: STEP_CAP, law })
    }

    pub fn with_step_cap(mut self, cap: u64) -> Self {
        self.step_cap = cap;
        self
    }

    /// Independent stream for trajectory `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// `q_x = mu_x^-1 J(x, G)`.
    pub fn holding_rate(&self, x: &Vertex) -> f64 {
        self.model.total_rate(x).value / self.model.mu(x)
    }

    /// Target of one jump from `x`, distributed as `J(x, .) / J(x, G)`.
    pub fn sample_jump(&self, x: &Vertex, rng: &mut ChaCha8Rng) -> Vertex {
        match &self.law {
            JumpLaw::Explicit { targets, cum } => {
                let i = x.0[0] as usize;
                let c = &cum[i];
                let u = rng.random::<f64>() * c[c.len() - 1];
                let k = c.partition_point(|v| *v <= u).min(c.len() - 1);
                Vertex::from(targets[i][k] as i64)
            }
            JumpLaw::Radial { dim, metric, cum, tail, tail_mass, far_rungs, suppressed } => loop {
                let table = cum[cum.len() - 1];
                let far: f64 = far_rungs.iter().map(|r| r.1).sum();
                let mut u = rng.random::<f64>() * (table + tail_mass + far);
                let s = if u < table {
                    cum.partition_point(|v| *v <= u) as u64 + 1
                } else {
                    u -= table;
                    let mut pick = None;
                    for (r, w) in far_rungs {
                        if u < *w {
                            pick = Some(*r);
                            break;
                        }
                        u -= w;
                    }
                    match (pick, tail) {
                        (Some(r), _) => r,
                        (None, TailLaw::Power { alpha, poly, bound }) => sample_power_tail(*alpha, poly, *bound, rng),
                        (None, TailLaw::None) => far_rungs.last().map_or(cum.len() as u64, |r| r.0),
                    }
                };
                let step = sample_on_shell(*dim, *metric, s, rng);
                let y = Vertex(x.0.iter().zip(&step).map(|(a, b)| a + b).collect());
                if let Some(p) = suppressed {
                    if (x == &p[0] && y == p[1]) || (x == &p[1] && y == p[0]) {
                        continue;
                    }
                }
                return y;
            },
        }
    }

    /// Runs one path from `x` until `stop(time, position)` returns a value.
    ///
    /// `stop` is called at time 0 and after every jump with the jump time; `None` when the step cap is hit.
    pub fn run<T>(
        &self,
        x: &Vertex,
        rng: &mut ChaCha8Rng,
        mut stop: impl FnMut(f64, &Vertex, Option<f64>) -> Option<T>,
    ) -> Option<T> {
        let mut pos = x.clone();
        let mut t = 0.0;
        if let Some(v) = stop(t, &pos, None) {
            return Some(v);
        }
        for _ in 0..self.step_cap {
            let q = self.holding_rate(&pos);
            if q <= 0.0 {
                // absorbing vertex; report the holding time as infinite
                return stop(f64::INFINITY, &pos, Some(f64::INFINITY));
            }
            let hold = -(1.0 - rng.random::<f64>()).ln() / q;
            let next = t + hold;
            if let Some(v) = stop(next, &pos, Some(hold)) {
                return Some(v);
            }
            pos = self.sample_jump(&pos, rng);
            t = next;
            if let Some(v) = stop(t, &pos, None) {
                return Some(v);
            }
        }
        None
    }

    fn estimate(&self, label: String, n: usize, f: impl Fn(u64) -> Option<f64> + Sync + Send) -> Result<EstimateReport> {
        if n == 0 {
            return Err(Error::InvalidData("need at least one trajectory".into()));
        }
        let samples: Vec<Option<f64>> = (0..n as u64).into_par_iter().map(f).collect();
        Ok(EstimateReport::from_samples(label, self.seed, samples))
    }
}

/// Mean of the exit time `tau_B` from `B(center, r)` started at `x`.
pub fn sample_exit_time(
    sampler: &TrajectorySampler,
    x: &Vertex,
    center: &Vertex,
    r: f64,
    n: usize,
) -> Result<EstimateReport> {
    let model = sampler.model;
    model.distance(center, x)?;
    let inside = |v: &Vertex| model.distance(center, v).map(|d| d as f64 <= r).unwrap_or(false);
    sampler.estimate(format!("exit_time x={x} B({center},{r})"), n, |i| {
        let mut rng = sampler.rng(i);
        sampler.run(x, &mut rng, |t, pos, hold| match hold {
            None if !inside(pos) => Some(t),
            Some(h) if h.is_infinite() => Some(f64::INFINITY),
            _ => None,
        })
    })
}

/// `P^x(T_y <= tau_B)` for `y` in `B(center, r)`.
pub fn hit_before_exit(
    sampler: &TrajectorySampler,
    x: &Vertex,
    y: &Vertex,
    center: &Vertex,
    r: f64,
    n: usize,
) -> Result<EstimateReport> {
    let model = sampler.model;
    if model.distance(center, y)? as f64 > r {
        return Err(Error::InvalidData(format!("target {y} outside B({center},{r})")));
    }
    model.distance(center, x)?;
    let inside = |v: &Vertex| model.distance(center, v).map(|d| d as f64 <= r).unwrap_or(false);
    sampler.estimate(format!("hit {y} before exit x={x} B({center},{r})"), n, |i| {
        let mut rng = sampler.rng(i);
        sampler.run(x, &mut rng, |_, pos, hold| match hold {
            None if pos == y => Some(1.0),
            None if !inside(pos) => Some(0.0),
            Some(h) if h.is_infinite() => Some(0.0),
            _ => None,
        })
    })
}

/// Position at time `t` of each of `n` paths from `x` (`None` when capped).
pub fn sample_positions(sampler: &TrajectorySampler, x: &Vertex, t: f64, n: usize) -> Vec<Option<Vertex>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sampler.rng(i);
            sampler.run(x, &mut rng, |now, pos, hold| match hold {
                Some(_) if now >= t => Some(pos.clone()),
                _ => None,
            })
        })
        .collect()
}

/// Estimates of `E Y_T^2` and `P(Y_T >= lambda)` with `Y_T = sup_{s <= T} d(X_0, X_s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionSupReport {
    pub second_moment: EstimateReport,
    pub exceed: EstimateReport,
    pub t: f64,
    pub lambda: f64,
    /// `4 R1^2 delta T` for a single-range ladder, `delta = R1^(-1-alpha) log R1`.
    #[serde(default, with = "crate::io::real_opt")]
    pub doob_bound: Option<f64>,
    /// `4 T log R1 / (lambda^2 R1^(alpha-1))`.
    #[serde(default, with = "crate::io::real_opt")]
    pub chebyshev_bound: Option<f64>,
    /// Estimates within bound + 3 SE (true when no bound applies).
    pub within_bounds: bool,
}

/// Running supremum of the displacement over `[0, t]` for paths from the origin.
pub fn sample_position_sup(sampler: &TrajectorySampler, t: f64, lambda: f64, n: usize) -> Result<PositionSupReport> {
    if !(t >= 0.0) {
        return Err(Error::InvalidData(format!("time {t} must be nonnegative")));
    }
    let model = sampler.model;
    let x0 = model.origin();
    let sups: Vec<Option<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sampler.rng(i);
            let mut best = 0.0f64;
            sampler.run(&x0, &mut rng, |now, pos, hold| {
                if hold.is_some() {
                    return (now > t).then_some(best);
                }
                best = best.max(model.distance(&x0, pos).unwrap() as f64);
                None
            })
        })
        .collect();
    if n == 0 {
        return Err(Error::InvalidData("need at least one trajectory".into()));
    }
    let second_moment = EstimateReport::from_samples("E Y_T^2", sampler.seed, sups.iter().map(|s| s.map(|v| v * v)).collect());
    let exceed = EstimateReport::from_samples(
        format!("P(Y_T >= {lambda})"),
        sampler.seed,
        sups.iter().map(|s| s.map(|v| f64::from(u8::from(v >= lambda)))).collect(),
    );
    let (doob_bound, chebyshev_bound) = match &model.description().kernel {
        KernelSpec::LadderSum { alpha, ranges, base: false } if ranges.len() == 1 => {
            let r1 = ranges[0] as f64;
            let delta = r1.powf(-1.0 - alpha) * r1.ln();
            (Some(4.0 * r1 * r1 * delta * t), Some(4.0 * t * r1.ln() / (lambda * lambda * r1.powf(alpha - 1.0))))
        }
        _ => (None, None),
    };
    let within = |e: &EstimateReport, b: Option<f64>| b.is_none_or(|b| e.mean <= b + 3.0 * e.std_error);
    let within_bounds = within(&second_moment, doob_bound) && within(&exceed, chebyshev_bound);
    Ok(PositionSupReport { second_moment, exceed, t, lambda, doob_bound, chebyshev_bound, within_bounds })
}
