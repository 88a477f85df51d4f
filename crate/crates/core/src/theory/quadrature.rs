//! Gaussian quadrature rules.
//!
//! All rules integrate against a probability-weighted measure: the standard
//! normal density on the real line, or the same density restricted to
//! `[0, inf)` (total mass one half).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 48;
pub const MIN_ORDER: usize = 8;

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix, weights the
/// squared first eigenvector components scaled by the total mass.
fn golub_welsch(diag: &[f64], off: &[f64], mass: f64) -> Rule {
    let n = diag.len();
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = diag[i];
        if i + 1 < n {
            jacobi[(i, i + 1)] = off[i];
            jacobi[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| (eig.eigenvalues[j], mass * eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Orthonormal probabilists' Hermite values `p_{n-1}(x), p_n(x)` and
/// `sum_{k<n} p_k(x)^2`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (prev, cur, sum_sq)
}

/// Gauss-Hermite rule for `E[f(X)]`, `X ~ N(0, 1)`.
pub fn gauss_hermite(order: usize) -> Result<Rule> {
    check_order(order)?;
    let diag = vec![0.0; order];
    let off: Vec<f64> = (1..order).map(|k| (k as f64).sqrt()).collect();
    let mut rule = golub_welsch(&diag, &off, 1.0);
    let sqrt_n = (order as f64).sqrt();
    for (x, w) in rule.nodes.iter_mut().zip(rule.weights.iter_mut()) {
        for _ in 0..3 {
            let (p_prev, p_n, _) = hermite_orthonormal(order, *x);
            *x -= p_n / (sqrt_n * p_prev);
        }
        let (_, _, sum_sq) = hermite_orthonormal(order, *x);
        *w = 1.0 / sum_sq;
    }
    // symmetrize against rounding
    for i in 0..order / 2 {
        let j = order - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if order % 2 == 1 {
        rule.nodes[order / 2] = 0.0;
    }
    Ok(rule)
}

/// Gauss-Legendre rule on `[-1, 1]` (unit weight, total mass 2).
pub fn gauss_legendre(order: usize) -> Rule {
    let diag = vec![0.0; order];
    let off: Vec<f64> = (1..order)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &off, 2.0)
}

/// Rule for `E[f(X); X > 0]`, `X ~ N(0, 1)`; weights sum to one half.
///
/// Recurrence coefficients come from a discretized Stieltjes procedure on a
/// panelled Gauss-Legendre discretization of the half-line.
pub fn half_normal(order: usize) -> Result<Rule> {
    check_order(order)?;
    const PANELS: usize = 64;
    const PANEL_ORDER: usize = 40;
    const CUTOFF: f64 = 16.0;
    let base = gauss_legendre(PANEL_ORDER);
    let width = CUTOFF / PANELS as f64;
    let mut xs = Vec::with_capacity(PANELS * PANEL_ORDER);
    let mut ws = Vec::with_capacity(PANELS * PANEL_ORDER);
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    for panel in 0..PANELS {
        let left = panel as f64 * width;
        for (&t, &w) in base.nodes.iter().zip(&base.weights) {
            let x = left + 0.5 * width * (t + 1.0);
            xs.push(x);
            ws.push(0.5 * width * w * density(x));
        }
    }
    let mass: f64 = ws.iter().sum();
    let mut diag = Vec::with_capacity(order);
    let mut off = Vec::with_capacity(order);
    let mut prev = vec![0.0; xs.len()];
    let mut cur = vec![1.0 / mass.sqrt(); xs.len()];
    let mut beta = 0.0;
    for _ in 0..order {
        let a: f64 = (0..xs.len()).map(|i| ws[i] * xs[i] * cur[i] * cur[i]).sum();
        let mut next: Vec<f64> = (0..xs.len())
            .map(|i| (xs[i] - a) * cur[i] - beta * prev[i])
            .collect();
        // one pass of reorthogonalization keeps the recurrence clean at high order
        let c1: f64 = (0..xs.len()).map(|i| ws[i] * next[i] * cur[i]).sum();
        let c0: f64 = (0..xs.len()).map(|i| ws[i] * next[i] * prev[i]).sum();
        for i in 0..xs.len() {
            next[i] -= c1 * cur[i] + c0 * prev[i];
        }
        let norm = (0..xs.len()).map(|i| ws[i] * next[i] * next[i]).sum::<f64>().sqrt();
        diag.push(a + c1);
        off.push(norm);
        beta = norm;
        for v in next.iter_mut() {
            *v /= norm;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    off.pop();
    Ok(golub_welsch(&diag, &off, 0.5))
}

fn check_order(order: usize) -> Result<()> {
    if order < MIN_ORDER {
        return Err(Error::InvalidArgument(format!(
            "quadrature order must be at least {MIN_ORDER}, got {order}"
        )));
    }
    Ok(())
}

/// Tensor rules over independent standard Gaussians.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    order: usize,
    pub hermite: Rule,
    pub half: Rule,
}

impl QuadratureGrid {
    pub fn new(order: usize) -> Result<Self> {
        Ok(Self {
            order,
            hermite: gauss_hermite(order)?,
            half: half_normal(order)?,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `E[f(X, Y)]` for independent standard Gaussians.
    pub fn integrate2(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let h = &self.hermite;
        let mut total = 0.0;
        for (&x, &wx) in h.nodes.iter().zip(&h.weights) {
            let mut inner = 0.0;
            for (&y, &wy) in h.nodes.iter().zip(&h.weights) {
                inner += wy * f(x, y);
            }
            total += wx * inner;
        }
        total
    }

    /// `E[f(X, Y, Z)]` for independent standard Gaussians.
    pub fn integrate3(&self, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let h = &self.hermite;
        let mut total = 0.0;
        for (&x, &wx) in h.nodes.iter().zip(&h.weights) {
            total += wx * self.integrate2(|y, z| f(x, y, z));
        }
        total
    }

    /// `E[f(X, Y)]` where `f` jumps across `X = 0`: each half-line of `X`
    /// uses the half-normal rule.
    pub fn integrate2_split(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let (h, half) = (&self.hermite, &self.half);
        let mut total = 0.0;
        for (&u, &wu) in half.nodes.iter().zip(&half.weights) {
            let mut inner = 0.0;
            for (&y, &wy) in h.nodes.iter().zip(&h.weights) {
                inner += wy * (f(u, y) + f(-u, y));
            }
            total += wu * inner;
        }
        total
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER).expect("default order is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(m: u32) -> f64 {
        (1..=m).step_by(2).map(f64::from).product()
    }

    #[test]
    fn hermite_moments() {
        let rule = gauss_hermite(48).unwrap();
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
        for j in 1..=20u32 {
            let exact = if j % 2 == 1 { 0.0 } else { double_factorial_odd(j - 1) };
            let got = rule.integrate(|x| x.powi(j as i32));
            let scale = rule.integrate(|x| x.abs().powi(j as i32));
            assert!((got - exact).abs() <= 1e-13 * scale, "moment {j}: {got} vs {exact}");
        }
    }

    #[test]
    fn hermite_small_order_nodes() {
        // He_8 roots, squared: roots of x^4 - 28x^3 + 210x^2 - 420x + 105
        let rule = gauss_hermite(8).unwrap();
        for &x in &rule.nodes {
            let y = x * x;
            let poly = (((y - 28.0) * y + 210.0) * y - 420.0) * y + 105.0;
            assert!(poly.abs() < 1e-9, "node {x}: {poly}");
        }
    }

    #[test]
    fn half_normal_moments() {
        let rule = half_normal(48).unwrap();
        // E[X^j; X > 0] = 2^{j/2 - 1} Gamma((j + 1) / 2) / sqrt(pi)
        let pi = std::f64::consts::PI;
        let expected = |j: u32| -> f64 {
            if j % 2 == 0 {
                0.5 * double_factorial_odd(j.saturating_sub(1))
            } else {
                let m = (j - 1) / 2;
                let fact: f64 = (1..=m).map(f64::from).product();
                2f64.powf(m as f64) * fact / (2.0 * pi).sqrt()
            }
        };
        for j in 0..=24u32 {
            let got = rule.integrate(|x| x.powi(j as i32));
            let exact = expected(j);
            assert!((got - exact).abs() <= 1e-11 * exact, "moment {j}: {got} vs {exact}");
        }
        assert!(rule.nodes.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = gauss_legendre(10);
        assert!((rule.integrate(|x| x.powi(18)) - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn grid_invariants() {
        let grid = QuadratureGrid::default();
        assert!((grid.integrate3(|_, _, _| 1.0) - 1.0).abs() < 1e-12);
        assert!((grid.integrate3(|s, _, _| s * s) - 1.0).abs() < 1e-10);
        assert!((grid.integrate3(|_, z, _| z * z) - 1.0).abs() < 1e-10);
        assert!((grid.integrate3(|_, _, h| h * h) - 1.0).abs() < 1e-10);
        assert!((grid.integrate2_split(|u, _| u.signum()) - 0.0).abs() < 1e-14);
        assert!((grid.integrate2_split(|u, w| (u * w).powi(2)) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn split_rule_handles_step() {
        let grid = QuadratureGrid::default();
        // E[1{X > 0} X] = 1/sqrt(2 pi)
        let got = grid.integrate2_split(|u, _| if u > 0.0 { u } else { 0.0 });
        assert!((got - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn low_order_rejected() {
        assert!(gauss_hermite(4).is_err());
        assert!(QuadratureGrid::new(7).is_err());
    }
}
