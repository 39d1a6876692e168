//! Graphs, metrics, measures, balls and jump kernels.
//!
//! A [`LatticeModel`] describes an infinite lattice `Z^d` (or a finite explicit
//! graph) with a measure and a symmetric jump kernel. [`FiniteModel`] is its
//! truncation to a computational window.

mod finite;
mod kernel;
pub mod tail;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use finite::{BoundaryMode, ExteriorAnnulus, FiniteModel, TruncateOptions};
pub use kernel::KernelSpec;
pub use tail::RowSum;

use crate::error::{Error, Result};
pub(crate) use kernel::Compiled;
use kernel::norm;

/// A vertex: lattice coordinates, or `[i]` for vertex `i` of an explicit graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vertex(pub Vec<i64>);

impl Vertex {
    pub fn origin(dim: usize) -> Self {
        Vertex(vec![0; dim])
    }

    pub fn axis(dim: usize, value: i64) -> Self {
        let mut c = vec![0; dim];
        c[0] = value;
        Vertex(c)
    }
}

impl From<i64> for Vertex {
    fn from(x: i64) -> Self {
        Vertex(vec![x])
    }
}

impl<const N: usize> From<[i64; N]> for Vertex {
    fn from(x: [i64; N]) -> Self {
        Vertex(x.to_vec())
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Linf,
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MeasureRule {
    Uniform { value: f64 },
    /// Alternating by parity of the coordinate sum.
    Checkerboard { even: f64, odd: f64 },
    /// Per-vertex values for explicit graphs.
    Explicit { values: Vec<f64> },
}

impl Default for MeasureRule {
    fn default() -> Self {
        MeasureRule::Uniform { value: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LatticeSpec {
    IntegerLattice {
        dim: usize,
        #[serde(default)]
        metric: Metric,
    },
    ExplicitGraph {
        labels: Vec<String>,
        edges: Vec<(usize, usize)>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub c_j: f64,
    pub c_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub state_cap: usize,
    pub tail_tolerance: f64,
    /// Shells summed explicitly out to this multiple of the radius before the tail expansion.
    pub shell_factor: u64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { state_cap: 200_000, tail_tolerance: 1e-10, shell_factor: 64 }
    }
}

/// Serializable description; a model is a pure function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescription {
    pub lattice: LatticeSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub measure: MeasureRule,
    #[serde(default)]
    pub constants: Option<ModelConstants>,
    #[serde(default)]
    pub settings: ModelSettings,
}

impl ModelDescription {
    pub fn polynomial(dim: usize, alpha: f64) -> Self {
        ModelDescription {
            lattice: LatticeSpec::IntegerLattice { dim, metric: Metric::Linf },
            kernel: KernelSpec::Polynomial { alpha },
            measure: MeasureRule::default(),
            constants: None,
            settings: ModelSettings::default(),
        }
    }

    pub fn ladder(alpha: f64, ranges: Vec<i64>) -> Self {
        ModelDescription {
            kernel: KernelSpec::LadderSum { alpha, ranges, base: true },
            ..Self::polynomial(1, alpha)
        }
    }

    pub fn explicit(labels: Vec<String>, edges: Vec<(usize, usize)>, entries: Vec<(usize, usize, f64)>) -> Self {
        ModelDescription {
            lattice: LatticeSpec::ExplicitGraph { labels, edges },
            kernel: KernelSpec::Tabulated { entries },
            measure: MeasureRule::default(),
            constants: None,
            settings: ModelSettings::default(),
        }
    }

    pub fn metric(mut self, metric: Metric) -> Self {
        if let LatticeSpec::IntegerLattice { metric: m, .. } = &mut self.lattice {
            *m = metric;
        }
        self
    }

    pub fn measure(mut self, measure: MeasureRule) -> Self {
        self.measure = measure;
        self
    }

    pub fn suppress(mut self, a: Vertex, b: Vertex) -> Self {
        self.kernel = self.kernel.suppress(a, b);
        self
    }

    pub fn build(self) -> Result<LatticeModel> {
        LatticeModel::new(self)
    }
}

#[derive(Clone, Debug)]
struct GraphTables {
    /// All-pairs hop distances, `u32::MAX` when unreachable.
    dist: Vec<Vec<u32>>,
}

/// Region for [`LatticeModel::kernel_row_sum`].
#[derive(Clone, Debug, PartialEq)]
pub enum RowRegion {
    All,
    OutsideBall { center: Vertex, radius: f64 },
    /// Vertices `y` with `inner <= d(x, y) <= outer`.
    Annulus { inner: f64, outer: f64 },
}

#[derive(Clone, Debug)]
pub struct LatticeModel {
    desc: ModelDescription,
    kernel: Compiled,
    graph: Option<GraphTables>,
    hash: String,
}

const EXPLICIT_VERTEX_CAP: usize = 8192;

impl LatticeModel {
    pub fn new(desc: ModelDescription) -> Result<Self> {
        let (lattice, n_vertices, graph) = match &desc.lattice {
            LatticeSpec::IntegerLattice { dim, metric } => {
                if *dim == 0 {
                    return Err(Error::InvalidModel("dimension must be positive".into()));
                }
                if matches!(desc.kernel, KernelSpec::Tabulated { .. }) {
                    return Err(Error::InvalidModel("tabulated kernels need an explicit graph".into()));
                }
                (Some((*dim, *metric)), 0, None)
            }
            LatticeSpec::ExplicitGraph { labels, edges } => {
                let n = labels.len();
                if n == 0 || n > EXPLICIT_VERTEX_CAP {
                    return Err(Error::InvalidModel(format!("explicit graph with {n} vertices")));
                }
                (None, n, Some(all_pairs_bfs(n, edges)?))
            }
        };
        match &desc.measure {
            MeasureRule::Uniform { value } => check_mu(*value)?,
            MeasureRule::Checkerboard { even, odd } => {
                check_mu(*even)?;
                check_mu(*odd)?;
            }
            MeasureRule::Explicit { values } => {
                if values.len() != n_vertices {
                    return Err(Error::InvalidModel("explicit measure needs one value per vertex".into()));
                }
                for v in values {
                    check_mu(*v)?;
                }
            }
        }
        let kernel = Compiled::build(&desc.kernel, lattice, n_vertices, desc.settings.shell_factor)?;
        let hash = hex::encode(Sha256::digest(serde_json::to_vec(&desc).expect("description serializes")));
        Ok(LatticeModel { desc, kernel, graph, hash })
    }

    pub fn description(&self) -> &ModelDescription {
        &self.desc
    }

    /// SHA-256 of the canonical JSON description.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.desc.settings
    }

    pub fn alpha(&self) -> Option<f64> {
        self.desc.kernel.alpha()
    }

    pub fn dim(&self) -> usize {
        match &self.desc.lattice {
            LatticeSpec::IntegerLattice { dim, .. } => *dim,
            LatticeSpec::ExplicitGraph { .. } => 1,
        }
    }

    pub fn metric(&self) -> Option<Metric> {
        match &self.desc.lattice {
            LatticeSpec::IntegerLattice { metric, .. } => Some(*metric),
            LatticeSpec::ExplicitGraph { .. } => None,
        }
    }

    pub fn is_lattice(&self) -> bool {
        self.graph.is_none()
    }

    pub fn origin(&self) -> Vertex {
        Vertex::origin(self.dim())
    }

    /// Vertices of an explicit graph, in index order.
    pub fn explicit_vertices(&self) -> Option<Vec<Vertex>> {
        self.graph.as_ref().map(|g| (0..g.dist.len() as i64).map(Vertex::from).collect())
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        match &self.graph {
            None => v.0.len() == self.dim(),
            Some(g) => v.0.len() == 1 && v.0[0] >= 0 && (v.0[0] as usize) < g.dist.len(),
        }
    }

    fn check_vertex(&self, v: &Vertex) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::InvalidData(format!("{v} is not a vertex of the model")))
        }
    }

    pub fn distance(&self, x: &Vertex, y: &Vertex) -> Result<u64> {
        self.check_vertex(x)?;
        self.check_vertex(y)?;
        match (&self.graph, self.metric()) {
            (None, Some(metric)) => Ok(norm(metric, &x.0, &y.0)),
            (Some(g), _) => {
                let d = g.dist[x.0[0] as usize][y.0[0] as usize];
                if d == u32::MAX {
                    Err(Error::DistanceUnreachable { from: x.clone(), to: y.clone() })
                } else {
                    Ok(d as u64)
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn mu(&self, x: &Vertex) -> f64 {
        match &self.desc.measure {
            MeasureRule::Uniform { value } => *value,
            MeasureRule::Checkerboard { even, odd } => {
                if x.0.iter().sum::<i64>().rem_euclid(2) == 0 {
                    *even
                } else {
                    *odd
                }
            }
            MeasureRule::Explicit { values } => values[x.0[0] as usize],
        }
    }

    /// `J(x, y)`.
    pub fn jump(&self, x: &Vertex, y: &Vertex) -> f64 {
        self.kernel.jump(x, y)
    }

    /// Total jump rate `J(x, G)` with its tail certificate.
    pub fn total_rate(&self, x: &Vertex) -> RowSum {
        self.kernel.total(x)
    }

    pub(crate) fn compiled(&self) -> &Compiled {
        &self.kernel
    }

    /// `J(x, A)` for the given region.
    pub fn kernel_row_sum(&self, x: &Vertex, region: &RowRegion) -> Result<RowSum> {
        self.check_vertex(x)?;
        match region {
            RowRegion::All => Ok(self.total_rate(x)),
            RowRegion::OutsideBall { center, radius } => {
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidData(format!("radius {radius}")));
                }
                if self.kernel.radial() && center == x {
                    return Ok(self.kernel.radial_outside(radius.floor() as u64, self.desc.settings.shell_factor));
                }
                let inside: f64 = self.ball(center, *radius)?.iter().map(|y| self.jump(x, y)).sum();
                let mut total = self.total_rate(x);
                total.value = (total.value - inside).max(0.0);
                Ok(total)
            }
            RowRegion::Annulus { inner, outer } => {
                let lo = inner.max(0.0).ceil() as u64;
                let hi = outer.floor();
                if hi < 0.0 || (hi as u64) < lo {
                    return Ok(RowSum::exact(0.0));
                }
                let hi = hi as u64;
                if self.kernel.radial() && self.is_lattice() {
                    let (dim, metric) = (self.dim(), self.metric().unwrap());
                    let v = (lo.max(1)..=hi)
                        .rev()
                        .map(|s| tail::shell_count(dim, metric, s) * self.kernel.radial_value(s))
                        .sum();
                    return Ok(RowSum::exact(v));
                }
                let mut v = 0.0;
                for y in self.ball(x, hi as f64)? {
                    if self.distance(x, &y)? >= lo {
                        v += self.jump(x, &y);
                    }
                }
                Ok(RowSum::exact(v))
            }
        }
    }

    /// Number of vertices in a ball of radius `r` (lattice only; exact).
    pub fn lattice_ball_count(&self, r: f64) -> Option<f64> {
        let metric = self.metric()?;
        Some(tail::ball_count(self.dim(), metric, r.max(0.0).floor() as u64))
    }

    /// `B(x0, r) = {y : d(x0, y) <= r}` in lexicographic order.
    pub fn ball(&self, x0: &Vertex, r: f64) -> Result<Vec<Vertex>> {
        self.check_vertex(x0)?;
        if !(r >= 0.0) {
            return Err(Error::InvalidData(format!("radius {r}")));
        }
        let cap = self.desc.settings.state_cap;
        match (&self.graph, self.metric()) {
            (None, Some(metric)) => {
                if r > 1e9 {
                    return Err(Error::WindowTooLarge { states: u128::MAX, cap });
                }
                let rr = r.floor() as i64;
                let count = tail::ball_count(self.dim(), metric, rr as u64);
                if count > cap as f64 {
                    return Err(Error::WindowTooLarge { states: count.min(u128::MAX as f64) as u128, cap });
                }
                let dim = self.dim();
                let mut out = Vec::with_capacity(count as usize);
                let mut offset = vec![-rr; dim];
                loop {
                    let inside = match metric {
                        Metric::Linf => true,
                        Metric::L1 => offset.iter().map(|c| c.abs()).sum::<i64>() <= rr,
                    };
                    if inside {
                        out.push(Vertex(x0.0.iter().zip(&offset).map(|(a, b)| a + b).collect()));
                    }
                    // odometer, last coordinate fastest
                    let mut k = dim;
                    loop {
                        if k == 0 {
                            return Ok(out);
                        }
                        k -= 1;
                        if offset[k] < rr {
                            offset[k] += 1;
                            break;
                        }
                        offset[k] = -rr;
                    }
                }
            }
            (Some(g), _) => {
                let row = &g.dist[x0.0[0] as usize];
                Ok(row
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| **d != u32::MAX && (**d as f64) <= r)
                    .map(|(i, _)| Vertex::from(i as i64))
                    .collect())
            }
            _ => unreachable!(),
        }
    }

    /// `V(x0, r) = mu(B(x0, r))`.
    pub fn volume(&self, x0: &Vertex, r: f64) -> Result<f64> {
        if let (MeasureRule::Uniform { value }, Some(count)) = (&self.desc.measure, self.lattice_ball_count(r)) {
            self.check_vertex(x0)?;
            if !(r >= 0.0) {
                return Err(Error::InvalidData(format!("radius {r}")));
            }
            return Ok(value * count);
        }
        Ok(self.ball(x0, r)?.iter().map(|y| self.mu(y)).sum())
    }

    /// Checks symmetry, `J(x,x) = 0` and the bounds on `mu` and `J(x,G)` at the
    /// probed vertices. Returns the smallest constants that fit the probes, or an
    /// error when configured constants are violated.
    pub fn validate(&self, probes: &[Vertex]) -> Result<ModelConstants> {
        let mut c_m: f64 = 1.0;
        let mut c_j: f64 = 1.0;
        for x in probes {
            self.check_vertex(x)?;
            let mu = self.mu(x);
            c_m = c_m.max(mu).max(1.0 / mu);
            let total = self.total_rate(x).value;
            if !(total > 0.0) {
                return Err(Error::ConstantViolated(format!("J({x}, G) = {total}")));
            }
            c_j = c_j.max(total).max(1.0 / total);
            if self.jump(x, x) != 0.0 {
                return Err(Error::InvalidModel(format!("J({x},{x}) != 0")));
            }
            for y in probes {
                if self.jump(x, y) != self.jump(y, x) {
                    return Err(Error::InvalidModel(format!("J({x},{y}) != J({y},{x})")));
                }
            }
        }
        if let Some(given) = self.desc.constants {
            if c_m > given.c_m {
                return Err(Error::ConstantViolated(format!("C_M = {} < required {c_m}", given.c_m)));
            }
            if c_j > given.c_j {
                return Err(Error::ConstantViolated(format!("C_J = {} < required {c_j}", given.c_j)));
            }
            return Ok(given);
        }
        Ok(ModelConstants { c_j, c_m })
    }

    /// Default probe set: the origin, suppressed-pair endpoints, or every explicit vertex.
    pub fn default_probes(&self) -> Vec<Vertex> {
        if let Some(v) = self.explicit_vertices() {
            return v;
        }
        let mut probes = vec![self.origin()];
        let mut spec = &self.desc.kernel;
        while let KernelSpec::SuppressedPair { base, pair } = spec {
            probes.extend(pair.iter().cloned());
            spec = base;
        }
        if let MeasureRule::Checkerboard { .. } = self.desc.measure {
            probes.push(Vertex::axis(self.dim(), 1));
        }
        probes.sort();
        probes.dedup();
        probes
    }

    pub fn truncate(&self, center: &Vertex, radius: f64, mode: BoundaryMode) -> Result<FiniteModel> {
        FiniteModel::build(self, center, radius, mode, &TruncateOptions::default())
    }

    pub fn truncate_with(
        &self,
        center: &Vertex,
        radius: f64,
        mode: BoundaryMode,
        opts: &TruncateOptions,
    ) -> Result<FiniteModel> {
        FiniteModel::build(self, center, radius, mode, opts)
    }
}

fn check_mu(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("measure value {v} must be positive")))
    }
}

fn all_pairs_bfs(n: usize, edges: &[(usize, usize)]) -> Result<GraphTables> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidModel(format!("edge ({a},{b}) out of range")));
        }
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut dist = vec![vec![u32::MAX; n]; n];
    for (s, row) in dist.iter_mut().enumerate() {
        row[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v] == u32::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    Ok(GraphTables { dist })
}
