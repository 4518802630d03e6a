//! Gauss rules from three-term recurrences.
//!
//! Recurrence coefficients of a measure are obtained from its modified
//! moments against monic Legendre polynomials (the modified Chebyshev
//! algorithm); nodes and weights then come from the eigen-decomposition of the
//! Jacobi matrix (Golub-Welsch).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply the rule to `f`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Affine image of a rule on `[−1, 1]` onto `[lo, hi]`, weights scaled by the Jacobian.
    pub fn mapped(&self, lo: f64, hi: f64) -> GaussRule {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        GaussRule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| w * half).collect(),
        }
    }
}

/// Three-term recurrence `p_{j+1} = (x − α_j) p_j − β_j p_{j−1}`, with `β_0` the total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrence {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Recurrence {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Golub-Welsch: the `n`-point Gauss rule of the first `n` coefficients.
    pub fn gauss(&self, n: usize) -> Result<GaussRule> {
        if n == 0 || n > self.len() {
            return Err(Error::usage(format!(
                "Gauss rule of order {n} needs that many recurrence coefficients, have {}",
                self.len()
            )));
        }
        let mut j = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            j[(i, i)] = self.alpha[i];
            if i + 1 < n {
                let off = self.beta[i + 1].sqrt();
                j[(i, i + 1)] = off;
                j[(i + 1, i)] = off;
            }
        }
        let eig = SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], self.beta[0] * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(GaussRule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }
}

/// Recurrence of the monic Legendre polynomials on `[−1, 1]` (`β_0 = 2`).
pub fn legendre_recurrence(n: usize) -> Recurrence {
    Recurrence {
        alpha: vec![0.0; n],
        beta: (0..n)
            .map(|l| {
                if l == 0 {
                    2.0
                } else {
                    let l = l as f64;
                    l * l / (4.0 * l * l - 1.0)
                }
            })
            .collect(),
    }
}

pub fn gauss_legendre(n: usize) -> GaussRule {
    let mut rule = legendre_recurrence(n).gauss(n).expect("n ≥ 1");
    // symmetrize against eigen-solver round-off
    for i in 0..n / 2 {
        let x = 0.5 * (rule.nodes[n - 1 - i] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    rule
}

/// Values `p_0(x), …, p_{n−1}(x)` of the monic Legendre polynomials.
pub fn monic_legendre_values(x: f64, n: usize) -> Vec<f64> {
    let rec = legendre_recurrence(n.max(1));
    let mut out = Vec::with_capacity(n);
    let (mut prev, mut cur) = (0.0, 1.0);
    for l in 0..n {
        out.push(cur);
        let next = (x - rec.alpha[l]) * cur - if l == 0 { 0.0 } else { rec.beta[l] * prev };
        prev = cur;
        cur = next;
    }
    out
}

/// Modified Chebyshev algorithm.
///
/// `moments[l] = ∫ p_l dμ` for the monic polynomials of `basis`, `l < 2n`.
/// Returns up to `n` recurrence coefficients of `μ`; fewer when the
/// recursion breaks down (a nonpositive or nonfinite `β`), which signals
/// that the moments are too ill-conditioned for a higher order.
pub fn modified_chebyshev(moments: &[f64], basis: &Recurrence) -> Recurrence {
    let n = moments.len() / 2;
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    if n == 0 || !(moments[0] > 0.0) {
        return Recurrence { alpha, beta };
    }
    let a = |l: usize| basis.alpha[l];
    let b = |l: usize| basis.beta[l];
    let width = 2 * n;
    let mut prev = vec![0.0; width];
    let mut cur = moments[..width].to_vec();
    alpha.push(a(0) + cur[1] / cur[0]);
    beta.push(cur[0]);
    for k in 1..n {
        let mut next = vec![0.0; width];
        for l in k..(width - k) {
            next[l] = cur[l + 1] - (alpha[k - 1] - a(l)) * cur[l] - beta[k - 1] * prev[l]
                + b(l) * cur[l - 1];
        }
        let bk = next[k] / cur[k - 1];
        let ak = a(k) + next[k + 1] / next[k] - cur[k] / cur[k - 1];
        if !(bk > 0.0 && bk.is_finite() && ak.is_finite()) {
            break;
        }
        alpha.push(ak);
        beta.push(bk);
        prev = cur;
        cur = next;
    }
    Recurrence { alpha, beta }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let rule = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got = rule.integrate(|x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}: {got}");
            }
        }
    }

    #[test]
    fn five_point_rule_matches_tabulated_values() {
        let r = gauss_legendre(5);
        assert!((r.nodes[4] - 0.906_179_845_938_664).abs() < 1e-14);
        assert!((r.weights[4] - 0.236_926_885_056_189_1).abs() < 1e-14);
        assert!((r.weights[2] - 128.0 / 225.0).abs() < 1e-14);
    }

    #[test]
    fn legendre_moments_of_lebesgue_reproduce_the_basis() {
        // the modified moments of dx on [−1,1] are (2, 0, 0, …)
        let n = 6;
        let mut m = vec![0.0; 2 * n];
        m[0] = 2.0;
        let rec = modified_chebyshev(&m, &legendre_recurrence(2 * n));
        let basis = legendre_recurrence(n);
        assert_eq!(rec.len(), n);
        for k in 0..n {
            assert!(rec.alpha[k].abs() < 1e-14);
            assert!((rec.beta[k] - basis.beta[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn weighted_measure_moments_are_matched() {
        // dμ = (1 − x²) dx on [−1, 1]; moments by a high-order rule
        let fine = gauss_legendre(40);
        let n = 5;
        let m: Vec<f64> = (0..2 * n)
            .map(|l| fine.integrate(|x| (1.0 - x * x) * monic_legendre_values(x, 2 * n)[l]))
            .collect();
        let rule = modified_chebyshev(&m, &legendre_recurrence(2 * n)).gauss(n).unwrap();
        for deg in 0..(2 * n) {
            let exact = fine.integrate(|x| (1.0 - x * x) * x.powi(deg as i32));
            assert!((rule.integrate(|x| x.powi(deg as i32)) - exact).abs() < 1e-13);
        }
    }
}
