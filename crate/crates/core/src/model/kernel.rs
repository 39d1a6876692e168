use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tail::{radial_tail, RowSum};
use super::{Metric, Vertex};
use crate::error::{Error, Result};

/// Symmetric jump kernel families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `J(x,y) = |x-y|^(-d-alpha)`, with `|.|` the lattice metric.
    Polynomial { alpha: f64 },
    /// `base` with the jumps between the two vertices removed.
    SuppressedPair { base: Box<KernelSpec>, pair: [Vertex; 2] },
    /// On Z: `|x-y|^(-1-alpha)` (when `base`) plus
    /// `log(R_i) R_i^(-1-alpha)` for every `|x-y| = R_i`.
    LadderSum {
        alpha: f64,
        ranges: Vec<i64>,
        #[serde(default = "default_true")]
        base: bool,
    },
    /// Explicit symmetric rates `(i, j, J(i,j))` between vertex indices.
    Tabulated { entries: Vec<(usize, usize, f64)> },
}

fn default_true() -> bool {
    true
}

impl KernelSpec {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            KernelSpec::Polynomial { alpha } | KernelSpec::LadderSum { alpha, .. } => Some(*alpha),
            KernelSpec::SuppressedPair { base, .. } => base.alpha(),
            KernelSpec::Tabulated { .. } => None,
        }
    }

    pub fn suppress(self, a: Vertex, b: Vertex) -> Self {
        KernelSpec::SuppressedPair { base: Box::new(self), pair: [a, b] }
    }
}

/// Kernel with precomputed row totals and lookup tables.
#[derive(Clone, Debug)]
pub(crate) enum Compiled {
    Radial {
        alpha: f64,
        dim: usize,
        metric: Metric,
        total: RowSum,
    },
    Ladder {
        alpha: f64,
        /// `(R_i, log(R_i) R_i^(-1-alpha))`
        rungs: Vec<(i64, f64)>,
        base: bool,
        total: RowSum,
    },
    Suppressed {
        base: Box<Compiled>,
        pair: [Vertex; 2],
    },
    Table {
        rows: Vec<BTreeMap<usize, f64>>,
        totals: Vec<f64>,
    },
}

pub(crate) fn norm(metric: Metric, x: &[i64], y: &[i64]) -> u64 {
    let diffs = x.iter().zip(y).map(|(a, b)| a.abs_diff(*b));
    match metric {
        Metric::Linf => diffs.max().unwrap_or(0),
        Metric::L1 => diffs.sum(),
    }
}

impl Compiled {
    pub(crate) fn build(
        spec: &KernelSpec,
        lattice: Option<(usize, Metric)>,
        n_vertices: usize,
        shell_factor: u64,
    ) -> Result<Self> {
        match spec {
            KernelSpec::Polynomial { alpha } => {
                let (dim, metric) = lattice.ok_or_else(|| {
                    Error::InvalidModel("polynomial kernel needs an integer lattice".into())
                })?;
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::DivergentTail(format!("alpha = {alpha} must be positive")));
                }
                let total = radial_tail(dim, metric, *alpha, 0, shell_factor);
                Ok(Compiled::Radial { alpha: *alpha, dim, metric, total })
            }
            KernelSpec::LadderSum { alpha, ranges, base } => {
                match lattice {
                    Some((1, _)) => {}
                    _ => return Err(Error::InvalidModel("ladder kernel lives on Z".into())),
                }
                if !(*alpha > 0.0) {
                    return Err(Error::DivergentTail(format!("alpha = {alpha} must be positive")));
                }
                let mut rungs = Vec::with_capacity(ranges.len());
                for &r in ranges {
                    if r < 1 {
                        return Err(Error::InvalidModel(format!("ladder range {r} must be >= 1")));
                    }
                    let rf = r as f64;
                    rungs.push((r, rf.ln() * rf.powf(-1.0 - alpha)));
                }
                let mut total = if *base {
                    radial_tail(1, Metric::Linf, *alpha, 0, shell_factor)
                } else {
                    RowSum::exact(0.0)
                };
                total.value += rungs.iter().map(|(_, w)| 2.0 * w).sum::<f64>();
                Ok(Compiled::Ladder { alpha: *alpha, rungs, base: *base, total })
            }
            KernelSpec::SuppressedPair { base, pair } => {
                if pair[0] == pair[1] {
                    return Err(Error::InvalidModel("suppressed pair must be two distinct vertices".into()));
                }
                let base = Compiled::build(base, lattice, n_vertices, shell_factor)?;
                Ok(Compiled::Suppressed { base: Box::new(base), pair: pair.clone() })
            }
            KernelSpec::Tabulated { entries } => {
                let mut rows = vec![BTreeMap::new(); n_vertices];
                for &(i, j, rate) in entries {
                    if i >= n_vertices || j >= n_vertices {
                        return Err(Error::InvalidModel(format!("tabulated pair ({i},{j}) out of range")));
                    }
                    if i == j {
                        return Err(Error::InvalidModel(format!("tabulated self-rate at {i}")));
                    }
                    if !(rate >= 0.0) || !rate.is_finite() {
                        return Err(Error::InvalidModel(format!("rate {rate} at ({i},{j})")));
                    }
                    if rows[i].insert(j, rate).is_some() || rows[j].insert(i, rate).is_some() {
                        return Err(Error::InvalidModel(format!("duplicate tabulated pair ({i},{j})")));
                    }
                }
                let totals = rows.iter().map(|r| r.values().sum()).collect();
                Ok(Compiled::Table { rows, totals })
            }
        }
    }

    pub(crate) fn jump(&self, x: &Vertex, y: &Vertex) -> f64 {
        if x == y {
            return 0.0;
        }
        match self {
            Compiled::Radial { alpha, dim, metric, .. } => {
                let r = norm(*metric, &x.0, &y.0) as f64;
                r.powf(-(*dim as f64) - alpha)
            }
            Compiled::Ladder { alpha, rungs, base, .. } => {
                let r = x.0[0].abs_diff(y.0[0]) as i64;
                let mut v = if *base { (r as f64).powf(-1.0 - alpha) } else { 0.0 };
                for (range, w) in rungs {
                    if *range == r {
                        v += w;
                    }
                }
                v
            }
            Compiled::Suppressed { base, pair } => {
                if (x == &pair[0] && y == &pair[1]) || (x == &pair[1] && y == &pair[0]) {
                    0.0
                } else {
                    base.jump(x, y)
                }
            }
            Compiled::Table { rows, .. } => rows
                .get(x.0[0] as usize)
                .and_then(|r| r.get(&(y.0[0] as usize)))
                .copied()
                .unwrap_or(0.0),
        }
    }

    /// `J(x, G)`.
    pub(crate) fn total(&self, x: &Vertex) -> RowSum {
        match self {
            Compiled::Radial { total, .. } | Compiled::Ladder { total, .. } => *total,
            Compiled::Suppressed { base, pair } => {
                let mut t = base.total(x);
                if x == &pair[0] {
                    t.value -= base.jump(&pair[0], &pair[1]);
                } else if x == &pair[1] {
                    t.value -= base.jump(&pair[1], &pair[0]);
                }
                t
            }
            Compiled::Table { totals, .. } => RowSum::exact(totals[x.0[0] as usize]),
        }
    }

    /// Translation invariant and depending on `x - y` only through the metric.
    pub(crate) fn radial(&self) -> bool {
        matches!(self, Compiled::Radial { .. } | Compiled::Ladder { .. })
    }

    /// Jump rate at radius `s` for radial kernels, summed over one direction.
    pub(crate) fn radial_value(&self, s: u64) -> f64 {
        match self {
            Compiled::Radial { alpha, dim, .. } => (s as f64).powf(-(*dim as f64) - alpha),
            Compiled::Ladder { alpha, rungs, base, .. } => {
                let mut v = if *base { (s as f64).powf(-1.0 - alpha) } else { 0.0 };
                for (r, w) in rungs {
                    if *r as u64 == s {
                        v += w;
                    }
                }
                v
            }
            _ => unreachable!("radial_value on a non-radial kernel"),
        }
    }

    /// `sum_{s > r} N(s) J(s)` for radial kernels.
    pub(crate) fn radial_outside(&self, r: u64, shell_factor: u64) -> RowSum {
        let explicit = shell_factor * r.max(1);
        match self {
            Compiled::Radial { alpha, dim, metric, .. } => radial_tail(*dim, *metric, *alpha, r, explicit),
            Compiled::Ladder { alpha, rungs, base, .. } => {
                let mut out = if *base {
                    radial_tail(1, Metric::Linf, *alpha, r, explicit)
                } else {
                    RowSum::exact(0.0)
                };
                out.value += rungs.iter().filter(|(q, _)| *q as u64 > r).map(|(_, w)| 2.0 * w).sum::<f64>();
                out
            }
            _ => unreachable!("radial_outside on a non-radial kernel"),
        }
    }
}
