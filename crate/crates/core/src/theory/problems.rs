//! The four deterministic saddle problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::ModelKind;

use super::coupling::coupling_matrices;
use super::expectation::{moments, Channel};
use super::quadrature::QuadratureGrid;
use super::saddle::{self, Eval, Objective, SaddleSolution, SolverOptions};

/// Search range of `eta` in the scalar problems.
pub const ETA_FLOOR: f64 = 1e-10;
pub const ETA_CEILING: f64 = 1e12;

/// Scalars shared by the symmetric, infinite-`T` and separate problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarParams {
    pub alpha: f64,
    pub kappa: f64,
    pub rho: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub loss: LossKind,
    pub model: ModelKind,
}

impl ScalarParams {
    pub fn validate(&self) -> Result<()> {
        check_common(self.rho, self.gamma1, self.gamma2, self.loss, self.model)?;
        check_ratio(self.alpha, self.kappa)
    }

    fn channel(&self) -> Result<Channel> {
        Channel::new(self.model, self.kappa / self.alpha, self.rho)
    }
}

fn check_common(rho: f64, gamma1: f64, gamma2: f64, loss: LossKind, model: ModelKind) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if !(0.0..=1.0).contains(&rho) {
        return bad(format!("rho must lie in [0, 1], got {rho}"));
    }
    if rho == 0.0 && model == ModelKind::LinearRegression {
        return bad("rho = 0 gives regression labels of infinite variance".into());
    }
    if !(gamma1 >= 0.0 && gamma2 >= 0.0 && gamma1.is_finite() && gamma2.is_finite()) {
        return bad(format!("gamma1, gamma2 must be finite and >= 0, got {gamma1}, {gamma2}"));
    }
    if loss == LossKind::Logistic && gamma1 == 0.0 && gamma2 == 0.0 {
        return bad("the logistic loss needs gamma1 > 0 or gamma2 > 0".into());
    }
    if loss == LossKind::Logistic && model == ModelKind::LinearRegression {
        return bad("the logistic loss needs +-1 labels".into());
    }
    Ok(())
}

fn check_ratio(alpha: f64, kappa: f64) -> Result<()> {
    if !(alpha > 0.0 && kappa > 0.0 && kappa <= alpha && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < kappa <= alpha, got kappa = {kappa}, alpha = {alpha}"
        )));
    }
    Ok(())
}

/// Which scalar problem to solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScalarProblem {
    /// Finite number of tasks with equal sample sizes.
    Symmetric { tasks: f64 },
    /// The `T -> infinity` limit.
    InfiniteTasks,
    /// The per-task separate formulation with alignment strength `R`.
    Separate { r_strength: f64 },
}

/// `f = (gamma1 - eta) r^2 / 2 + Q(eta) q^2 / 2 + E[M(rH + qS; b(eta))]`.
pub struct ScalarObjective<'a> {
    params: ScalarParams,
    problem: ScalarProblem,
    channel: Channel,
    grid: &'a QuadratureGrid,
}

impl<'a> ScalarObjective<'a> {
    pub fn new(params: ScalarParams, problem: ScalarProblem, grid: &'a QuadratureGrid) -> Result<Self> {
        params.validate()?;
        match problem {
            ScalarProblem::Symmetric { tasks } if !(tasks >= 1.0 && tasks.is_finite()) => {
                return Err(Error::InvalidArgument(format!("need T >= 1, got {tasks}")));
            }
            ScalarProblem::Separate { r_strength } => {
                if !(0.0..=1.0).contains(&r_strength) {
                    return Err(Error::InvalidArgument(format!("R must lie in [0, 1], got {r_strength}")));
                }
                let margin = params.gamma1 + params.gamma2 - params.gamma2 * r_strength;
                if margin <= 0.0 {
                    return Err(Error::NotStronglyConvex { margin });
                }
            }
            _ => {}
        }
        Ok(Self { params, problem, channel: params.channel()?, grid })
    }

    /// `Q(eta)` and its first two derivatives.
    fn q_coefficient(&self, eta: f64) -> (f64, f64, f64) {
        let ScalarParams { gamma1: g1, gamma2: g2, rho, .. } = self.params;
        let (t, k) = match self.problem {
            ScalarProblem::Separate { r_strength } => return (g1 + g2 - g2 * r_strength, 0.0, 0.0),
            ScalarProblem::Symmetric { tasks } => (tasks, g2 * (1.0 - rho + rho * tasks)),
            ScalarProblem::InfiniteTasks => (1.0, g2 * rho),
        };
        // A = t N / D with N = eta^2 + g2 eta, D = t eta + k
        let n = eta * eta + g2 * eta;
        let n1 = 2.0 * eta + g2;
        let d = t * eta + k;
        let a = t * n / d;
        let a1 = t * (n1 / d - t * n / (d * d));
        let a2 = t * (2.0 / d - 2.0 * t * n1 / (d * d) + 2.0 * t * t * n / (d * d * d));
        (g1 - eta + a, a1 - 1.0, a2)
    }

    /// Moreau parameter `b(eta)` and its first two derivatives.
    fn moreau_parameter(&self, eta: f64) -> (f64, f64, f64) {
        let ScalarParams { kappa, gamma2: g2, .. } = self.params;
        let (b, l1, l1p) = match self.problem {
            ScalarProblem::Symmetric { tasks } => {
                let b = super::coupling::symmetric_moreau_parameter(kappa, g2, eta, tasks);
                let u = eta * tasks + g2;
                let l1 = tasks / u - 1.0 / eta - 1.0 / (g2 + eta);
                let l1p = -tasks * tasks / (u * u) + 1.0 / (eta * eta) + 1.0 / ((g2 + eta) * (g2 + eta));
                (b, l1, l1p)
            }
            _ => {
                let s = g2 + eta;
                (kappa / s, -1.0 / s, 1.0 / (s * s))
            }
        };
        (b, b * l1, b * (l1 * l1 + l1p))
    }
}

impl Objective for ScalarObjective<'_> {
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
        DVector::from_vec(vec![1.0])
    }

    fn eval(&self, x: &DVector<f64>, eta: &DVector<f64>) -> Result<Eval> {
        let (q, r, e) = (x[0], x[1], eta[0]);
        if !(e > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let g1 = self.params.gamma1;
        let (qc, qc1, qc2) = self.q_coefficient(e);
        let (b, b1, b2) = self.moreau_parameter(e);
        let m = moments(self.params.loss, &self.channel, q, r, b, self.grid)?;
        let value = 0.5 * (g1 - e) * r * r + 0.5 * qc * q * q + m.value;
        let gx = DVector::from_vec(vec![qc * q + m.g_s, (g1 - e) * r + m.g_h]);
        let ge = DVector::from_vec(vec![-0.5 * r * r + 0.5 * q * q * qc1 + b1 * m.d_param()]);
        let hxx = DMatrix::from_row_slice(2, 2, &[qc + m.h_ss, m.h_sh, m.h_sh, g1 - e + m.h_hh]);
        let hxe = DMatrix::from_row_slice(2, 1, &[q * qc1 - b1 * m.gh_s, -r - b1 * m.gh_h]);
        let hee = DMatrix::from_element(1, 1, 0.5 * q * q * qc2 + b2 * m.d_param() + b1 * b1 * m.d2_param());
        Ok(Eval { value, gx, ge, hxx, hxe, hee })
    }

    fn eta_bounds(&self) -> Option<(f64, f64)> {
        Some((ETA_FLOOR, ETA_CEILING))
    }
}

/// Per-task scalars of the general problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralParams {
    pub alphas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub rho: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub loss: LossKind,
    pub model: ModelKind,
}

impl GeneralParams {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.len() != self.kappas.len() {
            return Err(Error::InvalidArgument(format!(
                "need one alpha and one kappa per task, got {} and {}",
                self.alphas.len(),
                self.kappas.len()
            )));
        }
        check_common(self.rho, self.gamma1, self.gamma2, self.loss, self.model)?;
        for (&a, &k) in self.alphas.iter().zip(&self.kappas) {
            check_ratio(a, k)?;
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.alphas.len()
    }

    /// The symmetric problem's scalars when every task has the same ratios.
    pub fn symmetric_part(&self) -> Option<ScalarParams> {
        let same = |v: &[f64]| v.iter().all(|&x| x == v[0]);
        (same(&self.alphas) && same(&self.kappas)).then(|| ScalarParams {
            alpha: self.alphas[0],
            kappa: self.kappas[0],
            rho: self.rho,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            loss: self.loss,
            model: self.model,
        })
    }
}

/// `sum_t (gamma1 - eta_t)(q_t^2 + r_t^2)/2 + q^T B^-1 q / 2
///  + sum_t E[M(r_t H + q_t S; V_t)]` over `{eta : C(eta) > 0}`.
pub struct GeneralObjective<'a> {
    params: GeneralParams,
    channels: Vec<Channel>,
    grid: &'a QuadratureGrid,
}

impl<'a> GeneralObjective<'a> {
    pub fn new(params: GeneralParams, grid: &'a QuadratureGrid) -> Result<Self> {
        params.validate()?;
        let channels = params
            .alphas
            .iter()
            .zip(&params.kappas)
            .map(|(&a, &k)| Channel::new(params.model, k / a, params.rho))
            .collect::<Result<_>>()?;
        Ok(Self { params, channels, grid })
    }
}

impl Objective for GeneralObjective<'_> {
    fn num_x(&self) -> usize {
        2 * self.params.num_tasks()
    }

    fn num_eta(&self) -> usize {
        self.params.num_tasks()
    }

    fn initial_x(&self) -> DVector<f64> {
        DVector::from_element(self.num_x(), 1.0)
    }

    fn initial_eta(&self) -> DVector<f64> {
        DVector::from_element(self.num_eta(), 1.0)
    }

    fn eval(&self, x: &DVector<f64>, eta: &DVector<f64>) -> Result<Eval> {
        let p = &self.params;
        let t = p.num_tasks();
        let cm = coupling_matrices(eta.as_slice(), p.gamma2, p.rho, &p.kappas)?;
        let q = x.rows(0, t).into_owned();
        let r = x.rows(t, t).into_owned();
        let u = &cm.b_inv * &q;
        let ms = (0..t)
            .map(|i| moments(p.loss, &self.channels[i], q[i], r[i], cm.v[i], self.grid))
            .collect::<Result<Vec<_>>>()?;
        let dv = cm.d_v(&p.kappas);
        // w_s = -(dB/d eta_s) u
        let w: Vec<DVector<f64>> = (0..t).map(|s| -(cm.d_b(s) * &u)).collect();

        let mut value = 0.5 * q.dot(&u);
        let mut gx = DVector::zeros(2 * t);
        let mut ge = DVector::zeros(t);
        let mut hxx = DMatrix::zeros(2 * t, 2 * t);
        let mut hxe = DMatrix::zeros(2 * t, t);
        let mut hee = DMatrix::zeros(t, t);
        hxx.view_mut((0, 0), (t, t)).copy_from(&cm.b_inv);
        for i in 0..t {
            let m = &ms[i];
            let d = p.gamma1 - eta[i];
            value += 0.5 * d * (q[i] * q[i] + r[i] * r[i]) + m.value;
            gx[i] = d * q[i] + u[i] + m.g_s;
            gx[t + i] = d * r[i] + m.g_h;
            hxx[(i, i)] += d + m.h_ss;
            hxx[(i, t + i)] = m.h_sh;
            hxx[(t + i, i)] = m.h_sh;
            hxx[(t + i, t + i)] = d + m.h_hh;
        }
        for s in 0..t {
            let mut g = -0.5 * (q[s] * q[s] + r[s] * r[s]) + 0.5 * u.dot(&w[s]);
            let bw = &cm.b_inv * &w[s];
            for i in 0..t {
                g += ms[i].d_param() * dv[(i, s)];
                hxe[(i, s)] = bw[i] - ms[i].gh_s * dv[(i, s)];
                hxe[(t + i, s)] = -ms[i].gh_h * dv[(i, s)];
            }
            hxe[(s, s)] -= q[s];
            hxe[(t + s, s)] -= r[s];
            ge[s] = g;
            for v in s..t {
                let mut h = -0.5 * u.dot(&(cm.d2_b(s, v) * &u)) + w[s].dot(&(&cm.b_inv * &w[v]));
                for i in 0..t {
                    h += ms[i].d2_param() * dv[(i, s)] * dv[(i, v)];
                    h += ms[i].d_param() * cm.d2_v(&p.kappas, i)[(s, v)];
                }
                hee[(s, v)] = h;
                hee[(v, s)] = h;
            }
        }
        Ok(Eval { value, gx, ge, hxx, hxe, hee })
    }

    fn eta_bounds(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Reusable solver: holds the quadrature grid and options.
#[derive(Debug, Clone)]
pub struct SaddleSolver {
    grid: QuadratureGrid,
    options: SolverOptions,
}

impl SaddleSolver {
    pub fn new(options: SolverOptions) -> Result<Self> {
        Ok(Self { grid: QuadratureGrid::new(options.quad_order)?, options })
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn solve_scalar(&self, params: &ScalarParams, problem: ScalarProblem) -> Result<SaddleSolution> {
        let obj = ScalarObjective::new(*params, problem, &self.grid)?;
        saddle::solve(&obj, &self.options)
    }

    pub fn solve_symmetric(&self, params: &ScalarParams, tasks: usize) -> Result<SaddleSolution> {
        self.solve_scalar(params, ScalarProblem::Symmetric { tasks: tasks as f64 })
    }

    pub fn solve_infinite_tasks(&self, params: &ScalarParams) -> Result<SaddleSolution> {
        self.solve_scalar(params, ScalarProblem::InfiniteTasks)
    }

    pub fn solve_separate(&self, params: &ScalarParams, r_strength: f64) -> Result<SaddleSolution> {
        self.solve_scalar(params, ScalarProblem::Separate { r_strength })
    }

    pub fn solve_general(&self, params: &GeneralParams) -> Result<SaddleSolution> {
        let obj = GeneralObjective::new(params.clone(), &self.grid)?;
        saddle::solve(&obj, &self.options)
    }
}

impl Default for SaddleSolver {
    fn default() -> Self {
        Self::new(SolverOptions::default()).expect("default options are valid")
    }
}

/// Entry points with default options.
pub fn solve_symmetric(params: &ScalarParams, tasks: usize) -> Result<SaddleSolution> {
    SaddleSolver::default().solve_symmetric(params, tasks)
}

pub fn solve_infinite_tasks(params: &ScalarParams) -> Result<SaddleSolution> {
    SaddleSolver::default().solve_infinite_tasks(params)
}

pub fn solve_separate_asymptotic(params: &ScalarParams, r_strength: f64) -> Result<SaddleSolution> {
    SaddleSolver::default().solve_separate(params, r_strength)
}

pub fn solve_general(params: &GeneralParams) -> Result<SaddleSolution> {
    SaddleSolver::default().solve_general(params)
}
