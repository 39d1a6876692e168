use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LatticeModel, Vertex};
use crate::error::{Error, Result};
use crate::linalg::Csr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Mass leaving the window is lost.
    Killed,
    /// Kernel restricted to the window, no killing.
    Reflected,
    /// Killed on the window, with exit mass routed to an explicit exterior annulus.
    ExteriorTracked,
}

impl BoundaryMode {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryMode::Killed => "killed",
            BoundaryMode::Reflected => "reflected",
            BoundaryMode::ExteriorTracked => "exterior-tracked",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "killed" => Some(BoundaryMode::Killed),
            "reflected" => Some(BoundaryMode::Reflected),
            "exterior-tracked" => Some(BoundaryMode::ExteriorTracked),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruncateOptions {
    /// Exterior annulus extends to `lambda_ext * R_win`.
    pub lambda_ext: f64,
}

impl Default for TruncateOptions {
    fn default() -> Self {
        TruncateOptions { lambda_ext: 4.0 }
    }
}

/// Tracked exterior vertices `B(x0, lambda_ext R) - W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExteriorAnnulus {
    pub vertices: Vec<Vertex>,
    pub center_dist: Vec<u64>,
    pub outer_radius: f64,
    /// `cross[(x, w)] = mu_x^-1 J(x, w)`.
    pub cross: DMatrix<f64>,
    /// `mu_x^-1 J(x, G - B(x0, outer_radius))`, the aggregate remainder channel.
    pub remainder: Vec<f64>,
    index: HashMap<Vertex, usize>,
}

impl ExteriorAnnulus {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, w: &Vertex) -> Option<usize> {
        self.index.get(w).copied()
    }
}

/// Truncation of a [`LatticeModel`] to a finite window.
#[derive(Clone, Debug)]
pub struct FiniteModel {
    pub vertices: Vec<Vertex>,
    pub mu: Vec<f64>,
    /// `J(x, y)` for `x, y` in the window.
    pub rates: Csr,
    /// `mu_x^-1 J(x, G - W)`; zero in reflected mode.
    pub kill: Vec<f64>,
    /// Certified bound on the error of each kill entry.
    pub kill_bound: f64,
    pub mode: BoundaryMode,
    pub center: Vertex,
    pub radius: f64,
    /// `d(center, x)` for window vertices.
    pub center_dist: Vec<u64>,
    pub exterior: Option<ExteriorAnnulus>,
    pub model_hash: String,
    index: HashMap<Vertex, usize>,
}

impl FiniteModel {
    pub(crate) fn build(
        model: &LatticeModel,
        center: &Vertex,
        radius: f64,
        mode: BoundaryMode,
        opts: &TruncateOptions,
    ) -> Result<Self> {
        let vertices = model.ball(center, radius)?;
        let exterior = if mode == BoundaryMode::ExteriorTracked {
            if !(opts.lambda_ext >= 1.0) {
                return Err(Error::InvalidData(format!("lambda_ext = {} must be >= 1", opts.lambda_ext)));
            }
            let outer = (opts.lambda_ext * radius).max(radius + 1.0);
            let r_in = radius.floor() as u64;
            let mut ext = Vec::new();
            let mut ext_dist = Vec::new();
            for w in model.ball(center, outer)? {
                let d = model.distance(center, &w)?;
                if d > r_in {
                    ext.push(w);
                    ext_dist.push(d);
                }
            }
            Some((ext, ext_dist, outer))
        } else {
            None
        };
        Self::from_parts(model, vertices, center.clone(), radius, mode, exterior)
    }

    /// Window given by an explicit vertex list (killed or reflected).
    pub fn from_window(model: &LatticeModel, mut vertices: Vec<Vertex>, mode: BoundaryMode) -> Result<Self> {
        if mode == BoundaryMode::ExteriorTracked {
            return Err(Error::WrongMode("exterior tracking needs a ball window"));
        }
        if vertices.is_empty() {
            return Err(Error::InvalidData("empty window".into()));
        }
        vertices.sort();
        vertices.dedup();
        let center = vertices[0].clone();
        Self::from_parts(model, vertices, center, f64::NAN, mode, None)
    }

    fn from_parts(
        model: &LatticeModel,
        vertices: Vec<Vertex>,
        center: Vertex,
        radius: f64,
        mode: BoundaryMode,
        exterior: Option<(Vec<Vertex>, Vec<u64>, f64)>,
    ) -> Result<Self> {
        let n = vertices.len();
        let index: HashMap<Vertex, usize> = vertices.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        let mu: Vec<f64> = vertices.iter().map(|v| model.mu(v)).collect();
        let center_dist = vertices
            .iter()
            .map(|v| model.distance(&center, v))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<(Vec<(usize, f64)>, f64, f64)> = vertices
            .par_iter()
            .map(|x| {
                let mut row = Vec::new();
                let mut inside = 0.0;
                for (j, y) in vertices.iter().enumerate() {
                    let r = model.jump(x, y);
                    if r != 0.0 {
                        row.push((j, r));
                        inside += r;
                    }
                }
                let total = model.total_rate(x);
                let out = (total.value - inside).max(0.0);
                (row, out, total.remainder_bound)
            })
            .collect();
        let mut kill = vec![0.0; n];
        let mut kill_bound: f64 = 0.0;
        let mut csr_rows = Vec::with_capacity(n);
        for (i, (row, out, bound)) in rows.into_iter().enumerate() {
            csr_rows.push(row);
            if mode != BoundaryMode::Reflected {
                kill[i] = out / mu[i];
                kill_bound = kill_bound.max(bound / mu[i]);
            }
        }
        let rates = Csr::from_rows(n, csr_rows);
        let exterior = exterior.map(|(ext, ext_dist, outer)| {
            let m = ext.len();
            let cols: Vec<Vec<f64>> = vertices
                .par_iter()
                .zip(&mu)
                .map(|(x, mx)| ext.iter().map(|w| model.jump(x, w) / mx).collect())
                .collect();
            let cross = DMatrix::from_fn(n, m, |i, j| cols[i][j]);
            let remainder = (0..n)
                .map(|i| (kill[i] - cols[i].iter().sum::<f64>()).max(0.0))
                .collect();
            let index = ext.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
            ExteriorAnnulus { vertices: ext, center_dist: ext_dist, outer_radius: outer, cross, remainder, index }
        });
        Ok(FiniteModel {
            vertices,
            mu,
            rates,
            kill,
            kill_bound,
            mode,
            center,
            radius,
            center_dist,
            exterior,
            model_hash: model.hash().to_string(),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn index_of(&self, v: &Vertex) -> Option<usize> {
        self.index.get(v).copied()
    }

    /// `J(x, W)` for window index `i`.
    pub fn window_rate(&self, i: usize) -> f64 {
        self.rates.row_sum(i)
    }

    /// Indices of window vertices within distance `r` of the center.
    pub fn inner_ball(&self, r: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| (self.center_dist[i] as f64) <= r).collect()
    }

    /// Same window and kernel, different boundary treatment (no exterior annulus).
    pub fn with_mode(&self, mode: BoundaryMode, model: &LatticeModel) -> Result<Self> {
        if mode == BoundaryMode::ExteriorTracked {
            return self.rebuild(model, mode);
        }
        let mut out = self.clone();
        if mode == BoundaryMode::Reflected {
            out.kill = vec![0.0; self.len()];
            out.kill_bound = 0.0;
        } else if self.mode == BoundaryMode::Reflected {
            return self.rebuild(model, mode);
        }
        out.mode = mode;
        out.exterior = None;
        Ok(out)
    }

    fn rebuild(&self, model: &LatticeModel, mode: BoundaryMode) -> Result<Self> {
        if self.radius.is_nan() {
            Self::from_window(model, self.vertices.clone(), mode)
        } else {
            Self::build(model, &self.center, self.radius, mode, &TruncateOptions::default())
        }
    }

    /// Sparse triplet text: vertices with `mu` and kill, then `(row, col, rate)`.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# finite model {}", self.model_hash);
        let _ = writeln!(s, "mode {}", self.mode.name());
        let _ = writeln!(s, "center {}", join(&self.center.0));
        let _ = writeln!(s, "radius {:?}", self.radius);
        let _ = writeln!(s, "kill_bound {:?}", self.kill_bound);
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(
                s,
                "v {i} {:?} {:?} {} {}",
                self.mu[i],
                self.kill[i],
                self.center_dist[i],
                join(&v.0)
            );
        }
        for (i, j, r) in self.rates.triplets() {
            let _ = writeln!(s, "r {i} {j} {r:?}");
        }
        if let Some(ext) = &self.exterior {
            let _ = writeln!(s, "exterior {:?}", ext.outer_radius);
            for (k, w) in ext.vertices.iter().enumerate() {
                let _ = writeln!(s, "w {k} {} {}", ext.center_dist[k], join(&w.0));
            }
            for i in 0..self.len() {
                for k in 0..ext.len() {
                    let c = ext.cross[(i, k)];
                    if c != 0.0 {
                        let _ = writeln!(s, "c {i} {k} {c:?}");
                    }
                }
                let _ = writeln!(s, "rho {i} {:?}", ext.remainder[i]);
            }
        }
        s
    }

    pub fn from_triplet_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::InvalidData(format!("line {}: {msg}", line + 1));
        let mut mode = None;
        let mut center = None;
        let mut radius = f64::NAN;
        let mut kill_bound = 0.0;
        let mut model_hash = String::new();
        let mut verts: Vec<(Vertex, f64, f64, u64)> = Vec::new();
        let mut trip = Vec::new();
        let mut outer = None;
        let mut ext: Vec<(Vertex, u64)> = Vec::new();
        let mut cross = Vec::new();
        let mut rho = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let Some(tag) = it.next() else { continue };
            let rest: Vec<&str> = it.collect();
            let num = |k: usize| -> Result<f64> {
                rest.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| bad(ln, "expected a number"))
            };
            let int = |k: usize| -> Result<i64> {
                rest.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| bad(ln, "expected an integer"))
            };
            let coords = |from: usize| -> Result<Vertex> {
                rest[from.min(rest.len())..]
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad(ln, "bad coordinate")))
                    .collect::<Result<Vec<i64>>>()
                    .map(Vertex)
            };
            match tag {
                "#" => {
                    if rest.len() == 3 && rest[0] == "finite" {
                        model_hash = rest[2].to_string();
                    }
                }
                "mode" => mode = rest.first().and_then(|m| BoundaryMode::parse(m)),
                "center" => center = Some(coords(0)?),
                "radius" => radius = num(0)?,
                "kill_bound" => kill_bound = num(0)?,
                "v" => {
                    if int(0)? as usize != verts.len() {
                        return Err(bad(ln, "vertices out of order"));
                    }
                    verts.push((coords(4)?, num(1)?, num(2)?, int(3)? as u64));
                }
                "r" => trip.push((int(0)? as usize, int(1)? as usize, num(2)?)),
                "exterior" => outer = Some(num(0)?),
                "w" => {
                    if int(0)? as usize != ext.len() {
                        return Err(bad(ln, "exterior vertices out of order"));
                    }
                    ext.push((coords(2)?, int(1)? as u64));
                }
                "c" => cross.push((int(0)? as usize, int(1)? as usize, num(2)?)),
                "rho" => rho.push((int(0)? as usize, num(1)?)),
                _ => return Err(bad(ln, "unknown record")),
            }
        }
        let mode = mode.ok_or_else(|| Error::InvalidData("missing mode".into()))?;
        let center = center.ok_or_else(|| Error::InvalidData("missing center".into()))?;
        let n = verts.len();
        let mut rows = vec![Vec::new(); n];
        for (i, j, r) in trip {
            if i >= n || j >= n {
                return Err(Error::InvalidData(format!("triplet ({i},{j}) out of range")));
            }
            rows[i].push((j, r));
        }
        let exterior = match outer {
            None => None,
            Some(outer_radius) => {
                let m = ext.len();
                let mut c = DMatrix::zeros(n, m);
                for (i, k, v) in cross {
                    if i >= n || k >= m {
                        return Err(Error::InvalidData(format!("cross entry ({i},{k}) out of range")));
                    }
                    c[(i, k)] = v;
                }
                let mut remainder = vec![0.0; n];
                for (i, v) in rho {
                    *remainder.get_mut(i).ok_or_else(|| Error::InvalidData("rho out of range".into()))? = v;
                }
                let (vertices, center_dist): (Vec<_>, Vec<_>) = ext.into_iter().unzip();
                let index = vertices.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
                Some(ExteriorAnnulus { vertices, center_dist, outer_radius, cross: c, remainder, index })
            }
        };
        let mut vertices = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut kill = Vec::with_capacity(n);
        let mut center_dist = Vec::with_capacity(n);
        for (v, m, k, d) in verts {
            vertices.push(v);
            mu.push(m);
            kill.push(k);
            center_dist.push(d);
        }
        let index = vertices.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        Ok(FiniteModel {
            vertices,
            mu,
            rates: Csr::from_rows(n, rows),
            kill,
            kill_bound,
            mode,
            center,
            radius,
            center_dist,
            exterior,
            model_hash,
            index,
        })
    }
}

fn join(c: &[i64]) -> String {
    c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDescription;

    fn z1() -> LatticeModel {
        ModelDescription::polynomial(1, 1.0).build().unwrap()
    }

    #[test]
    fn killed_window() {
        let f = z1().truncate(&0.into(), 10.0, BoundaryMode::Killed).unwrap();
        assert_eq!(f.len(), 21);
        assert!(f.kill.iter().all(|k| *k > 0.0));
        let i0 = f.index_of(&0.into()).unwrap();
        let expected = z1()
            .kernel_row_sum(&0.into(), &crate::model::RowRegion::OutsideBall { center: 0.into(), radius: 10.0 })
            .unwrap();
        assert!((f.kill[i0] - expected.value).abs() < 1e-13);
    }

    #[test]
    fn reflected_window() {
        let f = z1().truncate(&0.into(), 10.0, BoundaryMode::Reflected).unwrap();
        assert!(f.kill.iter().all(|k| *k == 0.0));
    }

    #[test]
    fn exterior_routing_sums_to_kill() {
        let m = z1();
        let killed = m.truncate(&0.into(), 6.0, BoundaryMode::Killed).unwrap();
        let tracked = m.truncate(&0.into(), 6.0, BoundaryMode::ExteriorTracked).unwrap();
        let ext = tracked.exterior.as_ref().unwrap();
        assert_eq!(ext.len(), 36);
        for i in 0..killed.len() {
            let routed: f64 = ext.cross.row(i).sum() + ext.remainder[i];
            assert!((routed - killed.kill[i]).abs() < 1e-14);
            assert!(ext.remainder[i] > 0.0);
        }
    }

    #[test]
    fn triplet_roundtrip() {
        let f = z1().truncate(&[0].into(), 3.0, BoundaryMode::ExteriorTracked).unwrap();
        let g = FiniteModel::from_triplet_text(&f.to_triplet_text()).unwrap();
        assert_eq!(f.vertices, g.vertices);
        assert_eq!(f.mu, g.mu);
        assert_eq!(f.kill, g.kill);
        assert_eq!(f.rates, g.rates);
        assert_eq!(f.exterior, g.exterior);
        assert_eq!(f.model_hash, g.model_hash);
        assert_eq!(g.index_of(&2.into()), Some(5));
    }
}
