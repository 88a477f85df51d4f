//! The `T x T` matrices of the general problem.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue margin below which `C` counts as singular.
const PD_MARGIN: f64 = 1e-12;

/// `C(eta)`, its inverse, `L`, `B = C^-1 o L` and `V_t = kappa_t (C^-1)_tt`.
#[derive(Debug, Clone)]
pub struct CouplingMatrices {
    pub c: DMatrix<f64>,
    pub c_inv: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_inv: DMatrix<f64>,
    pub v: DVector<f64>,
}

/// Builds the coupling matrices; fails with [`Error::NotPositiveDefinite`]
/// outside `{eta : C(eta) > 0}`.
pub fn coupling_matrices(eta: &[f64], gamma2: f64, rho: f64, kappa: &[f64]) -> Result<CouplingMatrices> {
    let t = eta.len();
    if t == 0 || kappa.len() != t {
        return Err(Error::InvalidArgument(format!(
            "eta and kappa must have the same positive length, got {} and {}",
            eta.len(),
            kappa.len()
        )));
    }
    let tf = t as f64;
    let c = DMatrix::from_fn(t, t, |i, j| {
        if i == j {
            (tf - 1.0) * gamma2 / tf + eta[i]
        } else {
            -gamma2 / tf
        }
    });
    let scale = c.amax().max(f64::MIN_POSITIVE);
    if c.clone().symmetric_eigenvalues().min() <= PD_MARGIN * scale {
        return Err(Error::NotPositiveDefinite);
    }
    let c_inv = Cholesky::new(c.clone())
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let l = DMatrix::from_fn(t, t, |i, j| if i == j { 1.0 } else { rho });
    let b = c_inv.component_mul(&l);
    let b_inv = Cholesky::new(b.clone())
        .ok_or(Error::NotPositiveDefinite)?
        .inverse();
    let v = DVector::from_fn(t, |i, _| kappa[i] * c_inv[(i, i)]);
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(CouplingMatrices { c, c_inv, l, b, b_inv, v })
}

impl CouplingMatrices {
    pub fn num_tasks(&self) -> usize {
        self.c.nrows()
    }

    /// `q^T B^-1 q / 2`.
    pub fn quadratic(&self, q: &DVector<f64>) -> f64 {
        0.5 * q.dot(&(&self.b_inv * q))
    }

    /// `dB/d eta_s = -(k_s k_s^T) o L`, with `k_s` the `s`-th column of `C^-1`.
    pub fn d_b(&self, s: usize) -> DMatrix<f64> {
        let k = self.c_inv.column(s);
        -(&k * k.transpose()).component_mul(&self.l)
    }

    /// `d2B/d eta_s d eta_u = K_us (k_u k_s^T + k_s k_u^T) o L`.
    pub fn d2_b(&self, s: usize, u: usize) -> DMatrix<f64> {
        let ks = self.c_inv.column(s);
        let ku = self.c_inv.column(u);
        let outer = &ku * ks.transpose() + &ks * ku.transpose();
        outer.component_mul(&self.l) * self.c_inv[(u, s)]
    }

    /// `dV_t/d eta_s = -kappa_t K_ts^2`, as a `T x T` matrix indexed `(t, s)`.
    pub fn d_v(&self, kappa: &[f64]) -> DMatrix<f64> {
        let t = self.num_tasks();
        DMatrix::from_fn(t, t, |i, s| -kappa[i] * self.c_inv[(i, s)].powi(2))
    }

    /// `d2V_t/d eta_s d eta_u = 2 kappa_t K_ts K_tu K_su`.
    pub fn d2_v(&self, kappa: &[f64], task: usize) -> DMatrix<f64> {
        let t = self.num_tasks();
        let k = &self.c_inv;
        DMatrix::from_fn(t, t, |s, u| 2.0 * kappa[task] * k[(task, s)] * k[(task, u)] * k[(s, u)])
    }
}

/// Moreau parameter of the symmetric problem,
/// `(kappa / (gamma2 + eta)) (1 + gamma2 / (eta T))`.
pub fn symmetric_moreau_parameter(kappa: f64, gamma2: f64, eta: f64, tasks: f64) -> f64 {
    kappa / (gamma2 + eta) * (1.0 + gamma2 / (eta * tasks))
}

/// `G(T, eta) = 1 - gamma2 rho T / (eta T + gamma2 (1 - rho + rho T))`.
pub fn g_factor(tasks: f64, eta: f64, gamma2: f64, rho: f64) -> f64 {
    1.0 - gamma2 * rho * tasks / (eta * tasks + gamma2 * (1.0 - rho + rho * tasks))
}

/// Per-task `q^2 / 2` coefficient of the symmetric problem,
/// `(gamma2 + eta) / (1 + (1 - rho) gamma2 / (eta T)) G(T, eta)`.
pub fn symmetric_q_coefficient(tasks: f64, eta: f64, gamma2: f64, rho: f64) -> f64 {
    (gamma2 + eta) / (1.0 + (1.0 - rho) * gamma2 / (eta * tasks)) * g_factor(tasks, eta, gamma2, rho)
}
