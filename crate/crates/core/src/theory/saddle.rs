//! Nested Newton solver for `min_{x >= 0} max_eta f(x, eta)`.
//!
//! For fixed `x` the objective is concave in `eta`; the inner loop is a damped
//! Newton ascent kept inside the feasible region. The outer loop minimizes
//! the value function `phi(x) = max_eta f(x, eta)`, whose gradient is
//! `f_x(x, eta*)` and whose Hessian is the Schur complement
//! `f_xx - f_xe f_ee^-1 f_ex`, by projected Newton with an Armijo search.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values and derivatives of the saddle objective at one point.
#[derive(Debug, Clone)]
pub struct Eval {
    pub value: f64,
    pub gx: DVector<f64>,
    pub ge: DVector<f64>,
    pub hxx: DMatrix<f64>,
    pub hxe: DMatrix<f64>,
    pub hee: DMatrix<f64>,
}

pub trait Objective {
    fn num_x(&self) -> usize;
    fn num_eta(&self) -> usize;
    fn initial_x(&self) -> DVector<f64>;
    fn initial_eta(&self) -> DVector<f64>;
    /// Fails with [`Error::NotPositiveDefinite`] outside the feasible set.
    fn eval(&self, x: &DVector<f64>, eta: &DVector<f64>) -> Result<Eval>;
    /// Box bounds on each `eta` component, if the feasible set is a box.
    fn eta_bounds(&self) -> Option<(f64, f64)>;
}

/// Tolerances and caps for the saddle solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub quad_order: usize,
    /// Projected gradient tolerance of the value function.
    pub grad_tol: f64,
    /// Gradient tolerance of the inner maximization.
    pub eta_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quad_order: super::quadrature::DEFAULT_ORDER,
            grad_tol: 1e-9,
            eta_tol: 1e-11,
            max_outer: 200,
            max_inner: 100,
        }
    }
}

/// A bound constraint that holds with equality at the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActiveBound {
    /// `q_t = 0` with a non-negative gradient.
    Q(usize),
    /// `r_t = 0` with a non-negative gradient.
    R(usize),
    /// `eta_t` at the lower end of its search range.
    EtaFloor(usize),
    /// `eta_t` at the upper end of its search range.
    EtaCeiling(usize),
}

/// Optimal `(q, r, eta)` with the optimal value and convergence metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub eta: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    /// Max-norm of the projected first-order conditions.
    pub residual: f64,
    pub iterations: usize,
    pub active: Vec<ActiveBound>,
}

struct Inner {
    eta: DVector<f64>,
    eval: Eval,
    /// Components pinned at a bound.
    pinned: Vec<bool>,
    residual: f64,
}

fn noise(value: f64) -> f64 {
    1e-13 * (1.0 + value.abs())
}

/// Solves `A d = rhs` for symmetric positive definite `A`, adding a ridge
/// when the factorization fails.
fn spd_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let scale = a.diagonal().amax().max(1e-12);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let shifted = a + DMatrix::identity(a.nrows(), a.ncols()) * ridge;
        if let Some(ch) = Cholesky::new(shifted) {
            return ch.solve(rhs);
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
    rhs / scale
}

fn pinned_mask(obj: &dyn Objective, eta: &DVector<f64>, ge: &DVector<f64>) -> Vec<bool> {
    match obj.eta_bounds() {
        None => vec![false; eta.len()],
        Some((lo, hi)) => eta
            .iter()
            .zip(ge.iter())
            .map(|(&e, &g)| (e <= lo && g <= 0.0) || (e >= hi && g >= 0.0))
            .collect(),
    }
}

fn clamp_eta(obj: &dyn Objective, eta: &mut DVector<f64>) {
    if let Some((lo, hi)) = obj.eta_bounds() {
        for e in eta.iter_mut() {
            *e = e.clamp(lo, hi);
        }
    }
}

fn free_norm(g: &DVector<f64>, pinned: &[bool]) -> f64 {
    g.iter()
        .zip(pinned)
        .filter(|(_, &p)| !p)
        .fold(0.0, |m, (v, _)| m.max(v.abs()))
}

fn sub_matrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn sub_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

fn maximize_eta(
    obj: &dyn Objective,
    x: &DVector<f64>,
    start: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<Inner> {
    let mut eta = start.clone();
    clamp_eta(obj, &mut eta);
    let mut eval = match obj.eval(x, &eta) {
        Ok(ev) => ev,
        Err(Error::NotPositiveDefinite) => {
            eta = obj.initial_eta();
            obj.eval(x, &eta)?
        }
        Err(e) => return Err(e),
    };
    for _ in 0..opts.max_inner {
        let pinned = pinned_mask(obj, &eta, &eval.ge);
        let residual = free_norm(&eval.ge, &pinned);
        if residual <= opts.eta_tol {
            return Ok(Inner { eta, eval, pinned, residual });
        }
        let free: Vec<usize> = (0..eta.len()).filter(|&i| !pinned[i]).collect();
        let g = sub_vector(&eval.ge, &free);
        let neg_h = -sub_matrix(&eval.hee, &free, &free);
        let step = spd_solve(&neg_h, &g);
        let mut dir = DVector::zeros(eta.len());
        for (k, &i) in free.iter().enumerate() {
            dir[i] = step[k];
        }
        let slope = eval.ge.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = &eta + &dir * t;
            clamp_eta(obj, &mut cand);
            match obj.eval(x, &cand) {
                Ok(ev) => {
                    let rises = ev.value >= eval.value + 1e-4 * t * slope - noise(eval.value);
                    let flat = ev.value >= eval.value - noise(eval.value)
                        && free_norm(&ev.ge, &pinned_mask(obj, &cand, &ev.ge)) < residual;
                    if rises || flat {
                        accepted = Some((cand, ev));
                        break;
                    }
                }
                Err(Error::NotPositiveDefinite) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, ev)) => {
                let moved = (&cand - &eta).amax();
                eta = cand;
                eval = ev;
                if moved <= 1e-15 * (1.0 + eta.amax()) {
                    break;
                }
            }
            None => break,
        }
    }
    let pinned = pinned_mask(obj, &eta, &eval.ge);
    let residual = free_norm(&eval.ge, &pinned);
    Ok(Inner { eta, eval, pinned, residual })
}

/// Reduced Hessian of the value function on the free `eta` components.
fn value_hessian(ev: &Eval, pinned: &[bool]) -> DMatrix<f64> {
    let free: Vec<usize> = (0..pinned.len()).filter(|&i| !pinned[i]).collect();
    if free.is_empty() {
        return ev.hxx.clone();
    }
    let all_x: Vec<usize> = (0..ev.hxx.nrows()).collect();
    let hxe = sub_matrix(&ev.hxe, &all_x, &free);
    let neg_hee = -sub_matrix(&ev.hee, &free, &free);
    let mut coupled = DMatrix::zeros(hxe.nrows(), hxe.nrows());
    for j in 0..hxe.nrows() {
        let col = spd_solve(&neg_hee, &hxe.row(j).transpose());
        for i in 0..hxe.nrows() {
            coupled[(i, j)] = hxe.row(i).dot(&col.transpose());
        }
    }
    let h = &ev.hxx + coupled;
    (&h + h.transpose()) * 0.5
}

/// Steps that would cross `x_i = 0` stop at this fraction of the current
/// value instead. Clipping onto the boundary is unsafe for `r`: `f_r` vanishes
/// identically at `r = 0`, so a clipped iterate would stall there.
const BOUNDARY_FRACTION: f64 = 0.1;
/// Below this an iterate with a positive gradient counts as on the bound.
const BOUND_SNAP: f64 = 1e-12;

fn at_bound(x: f64, g: f64) -> bool {
    x <= BOUND_SNAP && g > 0.0
}

fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| if at_bound(x[i], g[i]) { 0.0 } else { g[i] })
}

/// Runs the nested solver; `x` holds `q` then `r`.
pub fn solve(obj: &dyn Objective, opts: &SolverOptions) -> Result<SaddleSolution> {
    let nx = obj.num_x();
    let mut x = obj.initial_x();
    let mut inner = maximize_eta(obj, &x, &obj.initial_eta(), opts)?;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_outer {
        iterations = it + 1;
        let g = inner.eval.gx.clone();
        let pg = projected_gradient(&x, &g);
        if pg.amax() <= opts.grad_tol && inner.residual <= opts.eta_tol * 10.0 {
            converged = true;
            break;
        }
        let free: Vec<usize> = (0..nx).filter(|&i| !at_bound(x[i], g[i])).collect();
        let h = value_hessian(&inner.eval, &inner.pinned);
        let step = spd_solve(&sub_matrix(&h, &free, &free), &-sub_vector(&g, &free));
        let mut dir = DVector::zeros(nx);
        for (k, &i) in free.iter().enumerate() {
            dir[i] = step[k];
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand = DVector::from_fn(nx, |i, _| {
                let v = x[i] + t * dir[i];
                if v >= 0.0 {
                    v
                } else if BOUNDARY_FRACTION * x[i] <= BOUND_SNAP {
                    0.0
                } else {
                    BOUNDARY_FRACTION * x[i]
                }
            });
            match maximize_eta(obj, &cand, &inner.eta, opts) {
                Ok(cand_inner) => {
                    let v0 = inner.eval.value;
                    let v1 = cand_inner.eval.value;
                    let decrease = g.dot(&(&cand - &x));
                    let armijo = v1 <= v0 + 1e-4 * decrease + noise(v0);
                    if armijo {
                        accepted = Some((cand, cand_inner));
                        break;
                    }
                }
                Err(Error::NotPositiveDefinite) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cand_inner)) => {
                let moved = (&cand - &x).amax();
                x = cand;
                inner = cand_inner;
                if moved <= 1e-14 * (1.0 + x.amax()) {
                    let pg = projected_gradient(&x, &inner.eval.gx);
                    converged = pg.amax() <= opts.grad_tol.sqrt() * 1e-2;
                    break;
                }
            }
            None => {
                let pg = projected_gradient(&x, &inner.eval.gx);
                converged = pg.amax() <= opts.grad_tol.sqrt() * 1e-2;
                break;
            }
        }
    }
    let pg = projected_gradient(&x, &inner.eval.gx);
    let residual = pg.amax().max(inner.residual);
    if !converged {
        log::warn!("saddle solver stopped after {iterations} iterations with residual {residual:.3e}");
    }
    let tasks = nx / 2;
    let mut active = Vec::new();
    for i in 0..nx {
        if at_bound(x[i], inner.eval.gx[i]) {
            active.push(if i < tasks { ActiveBound::Q(i) } else { ActiveBound::R(i - tasks) });
        }
    }
    if let Some((lo, hi)) = obj.eta_bounds() {
        for (i, &e) in inner.eta.iter().enumerate() {
            if e <= lo {
                active.push(ActiveBound::EtaFloor(i));
            } else if e >= hi {
                active.push(ActiveBound::EtaCeiling(i));
            }
        }
    }
    Ok(SaddleSolution {
        q: x.rows(0, tasks).iter().copied().collect(),
        r: x.rows(tasks, tasks).iter().copied().collect(),
        eta: inner.eta.iter().copied().collect(),
        value: inner.eval.value,
        converged,
        residual,
        iterations,
        active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `q^2/2 + (r - b)^2/2 + eta (q - a) - eta^2/2`; the value function is
    /// `q^2/2 + (q - a)^2/2 + (r - b)^2/2`, minimized at `q = max(a/2, 0)`, `r = max(b, 0)`.
    struct Toy {
        a: f64,
        b: f64,
    }

    impl Objective for Toy {
        fn num_x(&self) -> usize {
            2
        }
        fn num_eta(&self) -> usize {
            1
        }
        fn initial_x(&self) -> DVector<f64> {
            DVector::from_vec(vec![1.0, 1.0])
        }
        fn initial_eta(&self) -> DVector<f64> {
            DVector::from_vec(vec![0.0])
        }
        fn eval(&self, x: &DVector<f64>, eta: &DVector<f64>) -> Result<Eval> {
            let (q, r, e) = (x[0], x[1], eta[0]);
            Ok(Eval {
                value: 0.5 * q * q + 0.5 * (r - self.b).powi(2) + e * (q - self.a) - 0.5 * e * e,
                gx: DVector::from_vec(vec![q + e, r - self.b]),
                ge: DVector::from_vec(vec![q - self.a - e]),
                hxx: DMatrix::identity(2, 2),
                hxe: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
                hee: DMatrix::from_element(1, 1, -1.0),
            })
        }
        fn eta_bounds(&self) -> Option<(f64, f64)> {
            None
        }
    }

    #[test]
    fn interior_saddle() {
        let s = solve(&Toy { a: 3.0, b: 2.0 }, &SolverOptions::default()).unwrap();
        assert!(s.converged);
        assert!((s.q[0] - 1.5).abs() < 1e-12 && (s.r[0] - 2.0).abs() < 1e-12);
        assert!((s.eta[0] + 1.5).abs() < 1e-12);
        assert!((s.value - 0.5 * (2.25 + 2.25)).abs() < 1e-12);
        assert!(s.active.is_empty());
    }

    #[test]
    fn active_bounds_reported() {
        let s = solve(&Toy { a: -1.0, b: -0.5 }, &SolverOptions::default()).unwrap();
        assert!(s.converged);
        assert_eq!((s.q[0], s.r[0]), (0.0, 0.0));
        assert_eq!(s.active, vec![ActiveBound::Q(0), ActiveBound::R(0)]);
    }
}
