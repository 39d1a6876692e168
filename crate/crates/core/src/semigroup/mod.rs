//! Generator, Dirichlet form, heat kernels by uniformization, exit times.

mod caloric;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub(crate) use caloric::{channel_matrix, exterior_of, harmonic_generators};
pub use caloric::{
    caloric_solve, duhamel_generators, harmonic_extension, CaloricField, ChannelId, ExteriorSchedule,
    GeneratorFamily, GeneratorId, Provenance, StepPropagator, TimeGrid,
};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, dense_solve};
use crate::model::{BoundaryMode, FiniteModel, LatticeModel, Vertex};

/// Poisson terms allowed before giving up.
pub const TERM_CAP: usize = 1_000_000;
/// Largest window solved by dense LU; larger systems use conjugate gradients.
pub const DENSE_SOLVE_CAP: usize = 4000;

/// `Q = M^-1 (J - diag J(x,W)) - diag(kill)` and its uniformization `P = I + Q / lambda`.
#[derive(Clone, Debug)]
pub struct GeneratorView<'a> {
    pub model: &'a FiniteModel,
    /// `max_x (mu_x^-1 J(x,W) + kill_x)`.
    pub lambda: f64,
    out: Vec<f64>,
}

impl<'a> GeneratorView<'a> {
    pub fn new(model: &'a FiniteModel) -> Self {
        let out: Vec<f64> = (0..model.len())
            .map(|i| model.window_rate(i) / model.mu[i] + model.kill[i])
            .collect();
        let lambda = out.iter().copied().fold(0.0, f64::max);
        GeneratorView { model, lambda, out }
    }

    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }

    /// Total outgoing rate at `i`, killing included.
    pub fn out_rate(&self, i: usize) -> f64 {
        self.out[i]
    }

    pub fn apply_q(&self, f: &[f64], y: &mut [f64]) {
        let m = self.model;
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = m.rates.row(i);
            let s: f64 = c.iter().zip(v).map(|(j, a)| a * f[*j]).sum();
            *yi = s / m.mu[i] - self.out[i] * f[i];
        }
    }

    /// `y = P f`.
    pub fn apply_p(&self, f: &[f64], y: &mut [f64]) {
        self.apply_q(f, y);
        for (yi, fi) in y.iter_mut().zip(f) {
            *yi = fi + *yi / self.lambda;
        }
    }

    /// `y = v^T P` for a row vector `v`.
    pub fn apply_p_left(&self, v: &[f64], y: &mut [f64]) {
        let m = self.model;
        let scaled: Vec<f64> = v.iter().zip(&m.mu).map(|(a, b)| a / b).collect();
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, w) = m.rates.row(i);
            let s: f64 = c.iter().zip(w).map(|(j, a)| a * scaled[*j]).sum();
            *yi = v[i] + (s - self.out[i] * v[i]) / self.lambda;
        }
    }

    pub fn dense_q(&self) -> DMatrix<f64> {
        let m = self.model;
        let mut q = m.rates.to_dense();
        for i in 0..self.len() {
            for j in 0..self.len() {
                q[(i, j)] /= m.mu[i];
            }
            q[(i, i)] = -self.out[i];
        }
        q
    }

    pub fn dense_p(&self) -> DMatrix<f64> {
        let n = self.len();
        if self.lambda == 0.0 {
            return DMatrix::identity(n, n);
        }
        let mut p = self.dense_q() / self.lambda;
        for i in 0..n {
            p[(i, i)] += 1.0;
        }
        p
    }
}

fn check_len(model: &FiniteModel, got: usize) -> Result<()> {
    if got == model.len() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: model.len(), got })
    }
}

/// `(Lf)(x) = mu_x^-1 sum_{y in W} (f(y) - f(x)) J(x,y) - kill_x f(x)`.
pub fn apply_generator(model: &FiniteModel, f: &[f64]) -> Result<Vec<f64>> {
    check_len(model, f.len())?;
    let mut y = vec![0.0; f.len()];
    GeneratorView::new(model).apply_q(f, &mut y);
    Ok(y)
}

/// Polarized form `1/2 sum_{x,y in W} (f(x)-f(y))(g(x)-g(y)) J(x,y) + sum_x kill_x mu_x f(x) g(x)`.
///
/// The kill term is the energy of jumps leaving the window for functions that
/// vanish outside it, so `E(f,f) = -<Qf, f>_mu` in every mode.
pub fn dirichlet_form(model: &FiniteModel, f: &[f64], g: &[f64]) -> Result<f64> {
    check_len(model, f.len())?;
    check_len(model, g.len())?;
    Ok(pairwise_form(model, f, g) + (0..model.len()).map(|i| model.kill[i] * model.mu[i] * f[i] * g[i]).sum::<f64>())
}

/// Pairwise part of the form only, over `W x W`.
pub fn pairwise_form(model: &FiniteModel, f: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..model.len() {
        let (c, v) = model.rates.row(i);
        for (j, a) in c.iter().zip(v) {
            s += (f[i] - f[*j]) * (g[i] - g[*j]) * a;
        }
    }
    0.5 * s
}

/// Poisson(mean) weights `w_0..w_K` with `P(N > K) <= tail`.
#[derive(Clone, Debug)]
pub(crate) struct Poisson {
    pub weights: Vec<f64>,
    pub tail: f64,
}

pub(crate) fn poisson(mean: f64, tail_tol: f64) -> Result<Poisson> {
    if mean == 0.0 {
        return Ok(Poisson { weights: vec![1.0], tail: 0.0 });
    }
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::InvalidData(format!("poisson mean {mean}")));
    }
    if mean > TERM_CAP as f64 {
        return Err(Error::TruncationBudgetExceeded { mean, cap: TERM_CAP });
    }
    // unnormalized weights relative to the mode, recursing outwards
    let mode = mean.floor() as usize;
    let mut left = vec![1.0];
    let mut w = 1.0;
    for k in (1..=mode).rev() {
        w *= k as f64 / mean;
        left.push(w);
    }
    left.reverse();
    let mut weights = left;
    let mut k = mode;
    let mut w = 1.0;
    loop {
        let next = w * mean / (k + 1) as f64;
        let denom = (k + 2) as f64;
        if denom > mean {
            let total: f64 = weights.iter().sum();
            let tail = next / total / (1.0 - mean / denom);
            if tail <= tail_tol {
                for v in weights.iter_mut() {
                    *v /= total;
                }
                return Ok(Poisson { weights, tail });
            }
        }
        k += 1;
        if k >= TERM_CAP {
            return Err(Error::TruncationBudgetExceeded { mean, cap: TERM_CAP });
        }
        w = next;
        weights.push(w);
    }
}

/// Which rows of the heat kernel to compute.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Vertex(&'a Vertex),
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelResult {
    pub t: f64,
    /// Window indices of the computed rows.
    pub sources: Vec<usize>,
    pub vertices: Vec<Vertex>,
    /// `values[r][y] = p_t(sources[r], y)`, a density with respect to `mu`.
    pub values: Vec<Vec<f64>>,
    /// Bound on the truncation error of every entry.
    pub error_bound: f64,
    pub mode: BoundaryMode,
    pub terms: usize,
}

impl HeatKernelResult {
    /// Row for window index `x`, if computed.
    pub fn row(&self, x: usize) -> Option<&[f64]> {
        self.sources.iter().position(|s| *s == x).map(|r| self.values[r].as_slice())
    }

    /// `p_t(x, y)` by window indices.
    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.row(x).expect("row was not computed")[y]
    }

    /// `sum_y p_t(x,y) mu_y` for each computed row.
    pub fn masses(&self, mu: &[f64]) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().zip(mu).map(|(p, m)| p * m).sum()).collect()
    }
}

/// `p_t(x, .)` on the window, entrywise within `tol` of `exp(tQ)`.
pub fn heat_kernel(model: &FiniteModel, source: Source<'_>, t: f64, tol: f64) -> Result<HeatKernelResult> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidData(format!("time {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidData(format!("tolerance {tol}")));
    }
    let view = GeneratorView::new(model);
    let mu_min = model.mu.iter().copied().fold(f64::INFINITY, f64::min);
    let pois = poisson(view.lambda * t, tol * mu_min)?;
    let sources: Vec<usize> = match source {
        Source::Vertex(v) => vec![model
            .index_of(v)
            .ok_or_else(|| Error::InvalidData(format!("{v} is outside the window")))?],
        Source::All => (0..model.len()).collect(),
    };
    let values: Vec<Vec<f64>> = sources
        .par_iter()
        .map(|&x| {
            let mut pi = vec![0.0; model.len()];
            pi[x] = 1.0;
            let mut acc: Vec<f64> = pi.iter().map(|p| p * pois.weights[0]).collect();
            let mut next = vec![0.0; model.len()];
            for w in &pois.weights[1..] {
                view.apply_p_left(&pi, &mut next);
                std::mem::swap(&mut pi, &mut next);
                for (a, p) in acc.iter_mut().zip(&pi) {
                    *a += w * p;
                }
            }
            acc.iter().zip(&model.mu).map(|(a, m)| a / m).collect()
        })
        .collect();
    Ok(HeatKernelResult {
        t,
        sources,
        vertices: model.vertices.clone(),
        values,
        error_bound: pois.tail / mu_min,
        mode: model.mode,
        terms: pois.weights.len(),
    })
}

/// Heat kernel of the process killed on leaving the window.
pub fn killed_heat_kernel(model: &FiniteModel, source: Source<'_>, t: f64, tol: f64) -> Result<HeatKernelResult> {
    if model.mode == BoundaryMode::Reflected {
        return Err(Error::WrongMode("killed heat kernel needs a killed window"));
    }
    heat_kernel(model, source, t, tol)
}

/// `e^{tQ} v` (right action), with the truncation bound `tail * |v|_inf`.
pub fn propagate(model: &FiniteModel, v: &[f64], t: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    check_len(model, v.len())?;
    let view = GeneratorView::new(model);
    let pois = poisson(view.lambda * t, tol)?;
    let mut cur = v.to_vec();
    let mut acc: Vec<f64> = cur.iter().map(|x| x * pois.weights[0]).collect();
    let mut next = vec![0.0; v.len()];
    for w in &pois.weights[1..] {
        view.apply_p(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        for (a, c) in acc.iter_mut().zip(&cur) {
            *a += w * c;
        }
    }
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok((acc, pois.tail * vmax))
}

/// Solves `-Q u = b`: dense LU for small windows, Jacobi-preconditioned CG on
/// the symmetric form `M(-Q)` above [`DENSE_SOLVE_CAP`].
pub(crate) fn solve_minus_q(model: &FiniteModel, b: &[f64]) -> Result<Vec<f64>> {
    let view = GeneratorView::new(model);
    let n = model.len();
    if n <= DENSE_SOLVE_CAP {
        return dense_solve(-view.dense_q(), b);
    }
    let diag: Vec<f64> = (0..n).map(|i| model.mu[i] * view.out_rate(i)).collect();
    let rhs: Vec<f64> = b.iter().zip(&model.mu).map(|(x, m)| x * m).collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        view.apply_q(x, y);
        for i in 0..n {
            y[i] *= -model.mu[i];
        }
    };
    conjugate_gradient(apply, &diag, &rhs, 1e-12, 20 * n + 1000)
}

/// `E^x tau_W` for every window vertex, solving `Q u = -1`.
pub fn expected_exit_time(model: &FiniteModel) -> Result<Vec<f64>> {
    if model.mode == BoundaryMode::Reflected || model.kill.iter().all(|k| *k == 0.0) {
        return Err(Error::NoExit);
    }
    let u = solve_minus_q(model, &vec![1.0; model.len()])?;
    if u.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::NumericalFailure("exit-time solve produced a negative value".into()));
    }
    Ok(u)
}

/// `P^x(T_y <= tau_B)` for `B = B(center, r)`, by the absorbing-state linear solve.
pub fn hitting_probability(model: &LatticeModel, center: &Vertex, r: f64, x: &Vertex, y: &Vertex) -> Result<f64> {
    if x == y {
        return Ok(1.0);
    }
    let ball = model.ball(center, r)?;
    if !ball.contains(y) || !ball.contains(x) {
        return Err(Error::InvalidData("start and target must lie in the ball".into()));
    }
    let window: Vec<Vertex> = ball.into_iter().filter(|v| v != y).collect();
    let fm = FiniteModel::from_window(model, window, BoundaryMode::Killed)?;
    let b: Vec<f64> = fm.vertices.iter().zip(&fm.mu).map(|(v, m)| model.jump(v, y) / m).collect();
    let h = solve_minus_q(&fm, &b)?;
    Ok(h[fm.index_of(x).expect("start lies in the window")])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDescription;

    fn two_state(j: f64) -> FiniteModel {
        let m = ModelDescription::explicit(vec!["a".into(), "b".into()], vec![(0, 1)], vec![(0, 1, j)])
            .build()
            .unwrap();
        m.truncate(&0.into(), 1.0, BoundaryMode::Reflected).unwrap()
    }

    #[test]
    fn poisson_weights_sum_to_one() {
        for mean in [0.0, 0.3, 5.0, 200.0, 2000.0] {
            let p = poisson(mean, 1e-14).unwrap();
            let s: f64 = p.weights.iter().sum();
            assert!((s + p.tail - 1.0).abs() < 1e-11, "mean {mean}: {s}");
        }
        assert!(matches!(poisson(5e6, 1e-12), Err(Error::TruncationBudgetExceeded { .. })));
    }

    #[test]
    fn two_state_closed_form() {
        let j = 0.7;
        let f = two_state(j);
        for t in [0.1, 1.0, 10.0] {
            let h = heat_kernel(&f, Source::All, t, 1e-13).unwrap();
            let exact = (1.0 + (-2.0 * j * t).exp()) / 2.0;
            assert!((h.p(0, 0) - exact).abs() < 1e-12);
            assert!((h.p(0, 1) - (1.0 - exact)).abs() < 1e-12);
        }
    }

    #[test]
    fn form_examples() {
        let f = two_state(0.7);
        assert!((dirichlet_form(&f, &[1.0, 0.0], &[1.0, 0.0]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(dirichlet_form(&f, &[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(dirichlet_form(&f, &[1.0], &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn generator_on_constants() {
        let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
        let k = m.truncate(&0.into(), 5.0, BoundaryMode::Killed).unwrap();
        let q1 = apply_generator(&k, &vec![1.0; k.len()]).unwrap();
        for (a, b) in q1.iter().zip(&k.kill) {
            assert!((a + b).abs() < 1e-13);
        }
        let r = m.truncate(&0.into(), 5.0, BoundaryMode::Reflected).unwrap();
        assert!(apply_generator(&r, &vec![1.0; r.len()]).unwrap().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn time_zero_is_identity() {
        let m = ModelDescription::polynomial(1, 1.0)
            .measure(crate::model::MeasureRule::Checkerboard { even: 1.0, odd: 2.0 })
            .build()
            .unwrap();
        let k = m.truncate(&0.into(), 3.0, BoundaryMode::Killed).unwrap();
        let h = killed_heat_kernel(&k, Source::All, 0.0, 1e-12).unwrap();
        for x in 0..k.len() {
            for y in 0..k.len() {
                let e = if x == y { 1.0 / k.mu[y] } else { 0.0 };
                assert_eq!(h.p(x, y), e);
            }
        }
    }

    #[test]
    fn single_vertex_window() {
        let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
        let k = m.truncate(&0.into(), 0.0, BoundaryMode::Killed).unwrap();
        let kappa = k.kill[0];
        let u = expected_exit_time(&k).unwrap();
        assert!((u[0] - 1.0 / kappa).abs() < 1e-14);
        let h = heat_kernel(&k, Source::All, 2.0, 1e-14).unwrap();
        assert!((h.p(0, 0) - (-kappa * 2.0).exp()).abs() < 1e-13);
    }

    #[test]
    fn reflected_has_no_exit() {
        let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
        let r = m.truncate(&0.into(), 3.0, BoundaryMode::Reflected).unwrap();
        assert!(matches!(expected_exit_time(&r), Err(Error::NoExit)));
    }

    #[test]
    fn cg_path_matches_dense() {
        let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
        let k = m.truncate(&0.into(), 20.0, BoundaryMode::Killed).unwrap();
        let view = GeneratorView::new(&k);
        let n = k.len();
        let diag: Vec<f64> = (0..n).map(|i| k.mu[i] * view.out_rate(i)).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            view.apply_q(x, y);
            for v in y.iter_mut() {
                *v = -*v;
            }
        };
        let cg = conjugate_gradient(apply, &diag, &vec![1.0; n], 1e-13, 10_000).unwrap();
        let lu = expected_exit_time(&k).unwrap();
        for (a, b) in cg.iter().zip(&lu) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn hitting_probability_trivial_and_bounded() {
        let m = ModelDescription::polynomial(1, 1.0).build().unwrap();
        assert_eq!(hitting_probability(&m, &0.into(), 4.0, &2.into(), &2.into()).unwrap(), 1.0);
        let p = hitting_probability(&m, &0.into(), 8.0, &2.into(), &0.into()).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
}
