//! Poincaré, weighted Poincaré and Nash constants.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nonempty, ConditionReport, Extremum, SweepGrid, Witness};
use crate::error::{Error, Result};
use crate::io::{real, Table};
use crate::model::{BoundaryMode, LatticeModel, Vertex};
use crate::semigroup::dirichlet_form;

/// Optimal Poincaré data on one ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareBall {
    pub center: Vertex,
    pub radius: f64,
    pub vertices: Vec<Vertex>,
    /// Smallest eigenvalue of the form against the measure on the constrained subspace.
    #[serde(with = "real")]
    pub lambda: f64,
    /// `1 / (R^alpha lambda)`, infinite for a disconnected ball.
    #[serde(with = "real")]
    pub constant: f64,
    /// Extremal function (indexed like `vertices`).
    pub function: Vec<f64>,
    /// A connected component not containing the first vertex, when the ball is disconnected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disconnected_component: Option<Vec<Vertex>>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Components of the graph with edges where `w[(i, j)] > 0`.
fn components(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if w[(i, j)] > 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// `min f^T L f / f^T M f` over `v^T f = 0`, for symmetric `L` and diagonal `M > 0`.
fn constrained_min_eigen(lap: &DMatrix<f64>, m: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let n = m.len();
    if n <= 1 {
        return (f64::INFINITY, vec![0.0; n]);
    }
    let s: Vec<f64> = m.iter().map(|x| x.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| lap[(i, j)] / (s[i] * s[j]));
    let mut u: Vec<f64> = v.iter().zip(&s).map(|(a, b)| a / b).collect();
    let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= un);
    // Householder reflection mapping e_1 to +-u; its other columns span u-perp
    let mut w = u.clone();
    if u[0] < 0.0 {
        w[0] += 1.0;
    } else {
        w[0] -= 1.0;
        w.iter_mut().for_each(|x| *x = -*x);
    }
    let ww: f64 = w.iter().map(|x| x * x).sum();
    let h = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - 2.0 * w[i] * w[j] / ww);
    let basis = h.columns(1, n - 1).into_owned();
    let b = basis.transpose() * &a * &basis;
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let (k, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, l)| if *l < acc.1 { (i, *l) } else { acc });
    let g = &basis * eig.eigenvectors.column(k);
    let f = g.iter().zip(&s).map(|(a, b)| a / b).collect();
    (lambda.max(0.0), f)
}

fn ball_kernel(model: &LatticeModel, vertices: &[Vertex]) -> DMatrix<f64> {
    let n = vertices.len();
    let rows: Vec<Vec<f64>> =
        vertices.par_iter().map(|x| vertices.iter().map(|y| model.jump(x, y)).collect()).collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// `L` of the ordered-pair form `sum_{x,y} (f(x)-f(y))^2 w(x,y)`.
fn laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut l = w * -2.0;
    for i in 0..n {
        l[(i, i)] = 2.0 * (w.row(i).sum() - w[(i, i)]);
    }
    l
}

fn disconnected(vertices: &[Vertex], w: &DMatrix<f64>) -> Option<Vec<Vertex>> {
    let comp = components(w);
    let other = comp.iter().copied().find(|c| *c != comp[0])?;
    Some(vertices.iter().zip(&comp).filter(|(_, c)| **c == other).map(|(v, _)| v.clone()).collect())
}

/// Optimal `C_Q(B) = sup Var_mu(f) / (R^alpha sum_{x,y in B} (f(x)-f(y))^2 J(x,y))`.
pub fn poincare_ball(model: &LatticeModel, center: &Vertex, radius: f64, alpha: f64) -> Result<PoincareBall> {
    let vertices = model.ball(center, radius)?;
    let mu: Vec<f64> = vertices.iter().map(|v| model.mu(v)).collect();
    let w = ball_kernel(model, &vertices);
    if let Some(comp) = disconnected(&vertices, &w) {
        return Ok(PoincareBall {
            center: center.clone(),
            radius,
            function: vertices.iter().map(|v| f64::from(u8::from(comp.contains(v)))).collect(),
            vertices,
            lambda: 0.0,
            constant: f64::INFINITY,
            disconnected_component: Some(comp),
        });
    }
    let (lambda, function) = constrained_min_eigen(&laplacian(&w), &mu, &mu);
    Ok(PoincareBall {
        center: center.clone(),
        radius,
        vertices,
        lambda,
        constant: 1.0 / (radius.powf(alpha) * lambda),
        function,
        disconnected_component: None,
    })
}

/// `Var_mu(f) / (R^alpha Form(f))` on `B(center, radius)` (f indexed like the ball).
pub fn rayleigh_quotient(model: &LatticeModel, center: &Vertex, radius: f64, alpha: f64, f: &[f64]) -> Result<f64> {
    let vertices = model.ball(center, radius)?;
    if f.len() != vertices.len() {
        return Err(Error::DimensionMismatch { expected: vertices.len(), got: f.len() });
    }
    let mu: Vec<f64> = vertices.iter().map(|v| model.mu(v)).collect();
    let mass: f64 = mu.iter().sum();
    let mean = f.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() / mass;
    let var: f64 = f.iter().zip(&mu).map(|(a, b)| (a - mean).powi(2) * b).sum();
    let mut form = 0.0;
    for (i, x) in vertices.iter().enumerate() {
        for (j, y) in vertices.iter().enumerate() {
            form += (f[i] - f[j]).powi(2) * model.jump(x, y);
        }
    }
    Ok(var / (radius.powf(alpha) * form))
}

fn weight_profile(model: &LatticeModel, center: &Vertex, radius: f64) -> Result<(Vec<Vertex>, Vec<f64>, Vec<f64>)> {
    let vertices: Vec<Vertex> = model
        .ball(center, radius)?
        .into_iter()
        .filter(|v| (model.distance(center, v).unwrap() as f64) < radius)
        .collect();
    let mu: Vec<f64> = vertices.iter().map(|v| model.mu(v)).collect();
    let raw: Vec<f64> = vertices.iter().map(|v| radius - model.distance(center, v).unwrap() as f64).collect();
    let norm: f64 = raw.iter().zip(&mu).map(|(a, b)| a * b).sum();
    Ok((vertices, mu, raw.into_iter().map(|p| p / norm).collect()))
}

/// Weighted inequality on the support `{d(x, x0) < R}` of `phi_R`, with `sum phi mu = 1`:
/// `sum |f - f_phi|^2 mu <= C sum (f(x)-f(y))^2 (phi(x) ∧ phi(y)) J(x,y)`.
/// `constant` is the optimal `C`; `lambda = 1 / C`.
pub fn weighted_poincare_ball(model: &LatticeModel, center: &Vertex, radius: f64) -> Result<(PoincareBall, Vec<f64>)> {
    let (vertices, mu, phi) = weight_profile(model, center, radius)?;
    let n = vertices.len();
    let j = ball_kernel(model, &vertices);
    let w = DMatrix::from_fn(n, n, |a, b| j[(a, b)] * phi[a].min(phi[b]));
    let v: Vec<f64> = phi.iter().zip(&mu).map(|(a, b)| a * b).collect();
    if let Some(comp) = disconnected(&vertices, &w) {
        return Ok((
            PoincareBall {
                center: center.clone(),
                radius,
                function: vertices.iter().map(|x| f64::from(u8::from(comp.contains(x)))).collect(),
                vertices,
                lambda: 0.0,
                constant: f64::INFINITY,
                disconnected_component: Some(comp),
            },
            phi,
        ));
    }
    let (lambda, function) = constrained_min_eigen(&laplacian(&w), &mu, &v);
    Ok((
        PoincareBall {
            center: center.clone(),
            radius,
            vertices,
            lambda,
            constant: 1.0 / lambda,
            function,
            disconnected_component: None,
        },
        phi,
    ))
}

/// Both sides of the weighted inequality for `f` indexed like the support.
pub fn weighted_rayleigh_quotient(model: &LatticeModel, center: &Vertex, radius: f64, f: &[f64]) -> Result<(f64, f64)> {
    let (vertices, mu, phi) = weight_profile(model, center, radius)?;
    if f.len() != vertices.len() {
        return Err(Error::DimensionMismatch { expected: vertices.len(), got: f.len() });
    }
    let mean: f64 = f.iter().zip(&phi).zip(&mu).map(|((a, p), m)| a * p * m).sum();
    let lhs = f.iter().zip(&mu).map(|(a, m)| (a - mean).powi(2) * m).sum();
    let mut rhs = 0.0;
    for (i, x) in vertices.iter().enumerate() {
        for (k, y) in vertices.iter().enumerate() {
            rhs += (f[i] - f[k]).powi(2) * phi[i].min(phi[k]) * model.jump(x, y);
        }
    }
    Ok((lhs, rhs))
}

fn ball_grid(balls: &[(Vertex, f64)]) -> SweepGrid {
    SweepGrid {
        centers: balls.iter().map(|b| b.0.clone()).collect(),
        radii: balls.iter().map(|b| b.1).collect(),
        ..Default::default()
    }
}

/// `C_Q = max` over balls of the optimal Poincaré constant.
pub fn check_poincare(model: &LatticeModel, alpha: f64, balls: &[(Vertex, f64)]) -> Result<ConditionReport> {
    nonempty(balls, "balls")?;
    if balls.iter().any(|b| !(b.1 >= 1.0)) {
        return Err(Error::InvalidData("Poincaré radii must be >= 1".into()));
    }
    let res: Vec<PoincareBall> =
        balls.par_iter().map(|(c, r)| poincare_ball(model, c, *r, alpha)).collect::<Result<_>>()?;
    let mut rep = ConditionReport::new("PI", Some(alpha), ball_grid(balls));
    let mut cq = Extremum::sup();
    let mut table = Table::new(&["center", "R", "lambda", "C_Q"]);
    for p in &res {
        let mut w = Witness::ball(&p.center, p.radius);
        if let Some(comp) = &p.disconnected_component {
            w = w.with_label(format!("disconnected component {}", comp.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")));
        }
        cq.offer(p.constant, w);
        table.push(vec![(&p.center).into(), p.radius.into(), p.lambda.into(), p.constant.into()]);
    }
    rep.put("C_Q", cq)?;
    rep.metadata.insert("eigen_tolerance".into(), 1e-10);
    rep.table = table;
    Ok(rep)
}

/// Weighted Poincaré constants, raw and divided by `R^alpha V(x0, R)`, next to the unweighted ones.
pub fn check_weighted_poincare(model: &LatticeModel, alpha: f64, balls: &[(Vertex, f64)]) -> Result<ConditionReport> {
    nonempty(balls, "balls")?;
    if balls.iter().any(|b| !(b.1 >= 1.0)) {
        return Err(Error::InvalidData("Poincaré radii must be >= 1".into()));
    }
    let res: Vec<(PoincareBall, PoincareBall, f64)> = balls
        .par_iter()
        .map(|(c, r)| {
            let (w, _) = weighted_poincare_ball(model, c, *r)?;
            let u = poincare_ball(model, c, *r, alpha)?;
            Ok((w, u, r.powf(alpha) * model.volume(c, *r)?))
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::new("WPI", Some(alpha), ball_grid(balls));
    let mut raw = Extremum::sup();
    let mut scaled = Extremum::sup();
    let mut plain = Extremum::sup();
    let mut table = Table::new(&["center", "R", "C_weighted", "C_weighted_scaled", "C_Q"]);
    let mut finite = true;
    for (w, u, s) in &res {
        let wit = Witness::ball(&w.center, w.radius);
        raw.offer(w.constant, wit.clone());
        scaled.offer(w.constant / s, wit.clone());
        plain.offer(u.constant, wit);
        finite &= w.constant.is_finite() && u.constant.is_finite();
        table.push(vec![(&w.center).into(), w.radius.into(), w.constant.into(), (w.constant / s).into(), u.constant.into()]);
    }
    rep.put("C_weighted", raw)?;
    rep.put("C_weighted_scaled", scaled)?;
    rep.put("C_Q", plain)?;
    rep.checks.insert("both_finite".into(), finite);
    rep.table = table;
    Ok(rep)
}

/// Lower bound on the Nash constant from sampled test functions supported in `B(0, window)`.
pub fn check_nash(
    model: &LatticeModel,
    alpha: f64,
    d: f64,
    window: f64,
    samples: usize,
    seed: u64,
) -> Result<ConditionReport> {
    let center = model.origin();
    let fm = model.truncate(&center, window, BoundaryMode::Killed)?;
    let n = fm.len();
    let mut radii = Vec::new();
    let mut r = 1.0;
    while r <= window / 2.0 {
        radii.push(r);
        r *= 2.0;
    }
    let mut funcs: Vec<(String, Vec<f64>)> = Vec::new();
    let mut delta = vec![0.0; n];
    delta[fm.index_of(&center).unwrap()] = 1.0;
    funcs.push(("delta".into(), delta));
    for &r in &radii {
        funcs.push((format!("indicator r={r}"), fm.center_dist.iter().map(|d| f64::from(u8::from(*d as f64 <= r))).collect()));
        funcs.push((format!("tent r={r}"), fm.center_dist.iter().map(|d| (r - *d as f64).max(0.0)).collect()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..samples {
        let r = if radii.is_empty() { 0.0 } else { radii[rng.random_range(0..radii.len())] };
        let f = fm
            .center_dist
            .iter()
            .map(|d| if *d as f64 <= r { rng.random::<f64>() } else { 0.0 })
            .collect();
        funcs.push((format!("random {k} r={r}"), f));
    }
    let ratios: Vec<f64> = funcs
        .par_iter()
        .map(|(_, f)| {
            let e = dirichlet_form(&fm, f, f)?;
            let l2: f64 = f.iter().zip(&fm.mu).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
            let l1: f64 = f.iter().zip(&fm.mu).map(|(a, m)| a.abs() * m).sum();
            Ok(if e > 0.0 {
                l2.powf(2.0 + 2.0 * alpha / d) / (e * l1.powf(2.0 * alpha / d))
            } else if l2 > 0.0 {
                f64::INFINITY
            } else {
                0.0
            })
        })
        .collect::<Result<_>>()?;
    let mut rep = ConditionReport::new(
        "Nash",
        Some(alpha),
        SweepGrid { centers: vec![center.clone()], radii: radii.clone(), ..Default::default() },
    );
    let mut cn = Extremum::lower_bound();
    let mut table = Table::new(&["function", "ratio"]);
    for ((label, _), q) in funcs.iter().zip(&ratios) {
        cn.offer(*q, Witness::default().with_label(label.clone()));
        table.push(vec![label.clone().into(), (*q).into()]);
    }
    rep.put("C_N_lower_bound", cn)?;
    rep.metadata.insert("dimension".into(), d);
    rep.metadata.insert("window".into(), window);
    rep.table = table;
    Ok(rep)
}
