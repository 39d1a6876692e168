//! Lattice shell counts and certified tails of power sums.
//!
//! Tails `sum_{s >= n} s^-p` use Euler-Maclaurin with six Bernoulli
//! corrections. For `f(x) = x^-p` every derivative has constant sign and
//! decreasing magnitude, so twice the first omitted correction bounds the
//! remainder.

use super::Metric;

/// B_2, B_4, ..., B_16.
const BERNOULLI_EVEN: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];
const EM_TERMS: usize = 6;
/// Below this start index the tail is summed explicitly before switching to the expansion.
const EM_MIN_START: u64 = 32;

/// A sum together with a bound on the absolute error of its infinite part.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RowSum {
    pub value: f64,
    pub remainder_bound: f64,
}

impl RowSum {
    pub fn exact(value: f64) -> Self {
        RowSum { value, remainder_bound: 0.0 }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out.round()
}

/// Coefficients `a_k` with `N(s) = sum_k a_k s^k`, the number of points of Z^d at
/// distance exactly `s >= 1` from the origin.
pub fn shell_polynomial(dim: usize, metric: Metric) -> Vec<f64> {
    let mut coeffs = vec![0.0; dim.max(1)];
    match metric {
        Metric::Linf => {
            // (2s+1)^d - (2s-1)^d
            for (k, c) in coeffs.iter_mut().enumerate().take(dim) {
                let parity = if (dim - k) % 2 == 1 { 2.0 } else { 0.0 };
                *c = binomial(dim, k) * 2f64.powi(k as i32) * parity;
            }
        }
        Metric::L1 => {
            // sum_{k=1}^{d} 2^k C(d,k) C(s-1,k-1)
            for k in 1..=dim {
                // polynomial of C(s-1, k-1) = prod_{i=1}^{k-1} (s-i) / (k-1)!
                let mut poly = vec![1.0];
                for i in 1..k {
                    let mut next = vec![0.0; poly.len() + 1];
                    for (j, &p) in poly.iter().enumerate() {
                        next[j + 1] += p;
                        next[j] -= p * i as f64;
                    }
                    poly = next;
                }
                let fact: f64 = (1..k).map(|i| i as f64).product();
                let scale = 2f64.powi(k as i32) * binomial(dim, k) / fact;
                for (j, p) in poly.iter().enumerate() {
                    coeffs[j] += scale * p;
                }
            }
        }
    }
    coeffs
}

/// Number of lattice points at distance exactly `s`.
pub fn shell_count(dim: usize, metric: Metric, s: u64) -> f64 {
    if s == 0 {
        return 1.0;
    }
    let x = s as f64;
    shell_polynomial(dim, metric)
        .iter()
        .enumerate()
        .map(|(k, a)| a * x.powi(k as i32))
        .sum::<f64>()
        .round()
}

/// Number of lattice points within distance `r` (an integer radius).
pub fn ball_count(dim: usize, metric: Metric, r: u64) -> f64 {
    match metric {
        Metric::Linf => ((2 * r + 1) as f64).powi(dim as i32),
        Metric::L1 => (0..=r).map(|s| shell_count(dim, metric, s)).sum(),
    }
}

fn rising(p: f64, m: usize) -> f64 {
    (0..m).map(|i| p + i as f64).product()
}

/// `sum_{s >= n} s^-p` for `p > 1`, `n >= 1`.
pub fn power_tail(p: f64, n: u64) -> RowSum {
    debug_assert!(p > 1.0 && n >= 1);
    let start = n.max(EM_MIN_START);
    let mut head = 0.0;
    for s in (n..start).rev() {
        head += (s as f64).powf(-p);
    }
    let x = start as f64;
    let mut tail = x.powf(1.0 - p) / (p - 1.0) + 0.5 * x.powf(-p);
    let mut fact = 1.0;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate().take(EM_TERMS) {
        let two_k = 2 * (k + 1);
        fact *= ((two_k - 1) * two_k) as f64;
        tail += b / fact * rising(p, two_k - 1) * x.powf(-p - two_k as f64 + 1.0);
    }
    let two_k = 2 * (EM_TERMS + 1);
    fact *= ((two_k - 1) * two_k) as f64;
    let omitted = (BERNOULLI_EVEN[EM_TERMS] / fact * rising(p, two_k - 1)).abs()
        * x.powf(-p - two_k as f64 + 1.0);
    RowSum {
        value: head + tail,
        remainder_bound: 2.0 * omitted + 4.0 * f64::EPSILON * (head + tail),
    }
}

/// `sum_{s > r} N(s) s^{-d-alpha}`: shells summed explicitly up to `explicit`, the rest
/// by the expansion applied to each monomial of the shell polynomial.
pub fn radial_tail(dim: usize, metric: Metric, alpha: f64, r: u64, explicit: u64) -> RowSum {
    let coeffs = shell_polynomial(dim, metric);
    let expo = dim as f64 + alpha;
    let explicit = explicit.max(r);
    let mut head = 0.0;
    for s in ((r + 1)..=explicit).rev() {
        head += shell_count(dim, metric, s) * (s as f64).powf(-expo);
    }
    let mut tail = 0.0;
    let mut bound = 0.0;
    for (k, a) in coeffs.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        let t = power_tail(expo - k as f64, explicit + 1);
        tail += a * t.value;
        bound += a.abs() * t.remainder_bound;
    }
    RowSum {
        value: head + tail,
        remainder_bound: bound + 4.0 * f64::EPSILON * (head + tail),
    }
}

/// `sum_{s = lo}^{hi} N(s) s^{-d-alpha} g(s)` over an explicit range of shells.
pub fn radial_range(dim: usize, metric: Metric, alpha: f64, lo: u64, hi: u64, weight: impl Fn(u64) -> f64) -> f64 {
    let expo = dim as f64 + alpha;
    let lo = lo.max(1);
    if hi < lo {
        return 0.0;
    }
    (lo..=hi)
        .rev()
        .map(|s| shell_count(dim, metric, s) * (s as f64).powf(-expo) * weight(s))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_shell(dim: usize, metric: Metric, s: i64) -> usize {
        let side = 2 * s + 1;
        let total = (side as usize).pow(dim as u32);
        (0..total)
            .filter(|&mut_idx| {
                let mut idx = mut_idx;
                let mut coords = Vec::with_capacity(dim);
                for _ in 0..dim {
                    coords.push((idx % side as usize) as i64 - s);
                    idx /= side as usize;
                }
                let n = match metric {
                    Metric::Linf => coords.iter().map(|c| c.abs()).max().unwrap(),
                    Metric::L1 => coords.iter().map(|c| c.abs()).sum(),
                };
                n == s
            })
            .count()
    }

    #[test]
    fn shell_counts_match_enumeration() {
        for metric in [Metric::Linf, Metric::L1] {
            for dim in 1..=3 {
                for s in 1..=6 {
                    assert_eq!(
                        shell_count(dim, metric, s as u64) as usize,
                        brute_shell(dim, metric, s),
                        "{metric:?} d={dim} s={s}"
                    );
                }
            }
        }
    }

    #[test]
    fn power_tail_matches_zeta() {
        let z2 = std::f64::consts::PI.powi(2) / 6.0;
        let t = power_tail(2.0, 1);
        assert!((t.value - z2).abs() <= t.remainder_bound + 1e-15);
        assert!(t.remainder_bound < 1e-14);
        let z4 = std::f64::consts::PI.powi(4) / 90.0;
        let t = power_tail(4.0, 1);
        assert!((t.value - z4).abs() < 1e-15);
    }

    #[test]
    fn power_tail_brute_force() {
        // explicit sum to 2e6 plus a crude integral tail
        let p = 1.75;
        let n = 40;
        let cut = 2_000_000u64;
        let mut s = 0.0;
        for k in (n..=cut).rev() {
            s += (k as f64).powf(-p);
        }
        let rest = power_tail(p, cut + 1).value;
        let t = power_tail(p, n);
        assert!((t.value - (s + rest)).abs() < 1e-12);
    }
}
