//! Finite-dimensional solvers for the multi-task and separate programs.
//!
//! Both losses go through the same damped Newton loop. The Hessian of the
//! coupled objective is `blockdiag(H_t) - (gamma2 / T) J (x) I` with
//! `H_t = (1/n_t) B_t^T D_t B_t + (gamma1 + gamma2) I`, so each Newton system
//! is solved by eliminating the mean block: with `z_t = -H_t^-1 g_t`,
//! `(I - gamma2 mean_t H_t^-1) d_bar = mean_t z_t` and
//! `d_t = z_t + gamma2 H_t^-1 d_bar`. For the squared loss one step is exact.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::{ExperimentConfig, TaskEnsemble};

/// Iteration caps and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub max_iterations: usize,
    /// Stop once the Euclidean norm of the stacked gradient drops below this.
    pub grad_tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { max_iterations: 500, grad_tol: 1e-8 }
    }
}

/// Per-task weights, their embeddings into `R^p`, and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub weights: Vec<DVector<f64>>,
    pub embedded: Vec<DVector<f64>>,
    pub objective_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Loss data of one task: features, labels and the per-task quadratic terms
/// that do not depend on the iterate.
struct TaskData {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    /// `(1/n) B^T B`, cached for the squared loss.
    gram: Option<DMatrix<f64>>,
}

impl TaskData {
    fn new(ensemble: &TaskEnsemble, task: usize, loss: LossKind) -> Self {
        let features = ensemble.observed_features(task).into_owned();
        let n = features.nrows() as f64;
        let gram = (loss == LossKind::Squared).then(|| features.tr_mul(&features) / n);
        Self { features, labels: ensemble.labels[task].clone(), gram }
    }

    fn samples(&self) -> f64 {
        self.features.nrows() as f64
    }

    fn loss_value(&self, loss: LossKind, w: &DVector<f64>) -> f64 {
        let scores = &self.features * w;
        scores.iter().zip(self.labels.iter()).map(|(&x, &y)| loss.value(y, x)).sum::<f64>()
            / self.samples()
    }

    /// Gradient and Hessian of `(1/n) sum_i loss(y_i; b_i . w)`.
    fn loss_derivatives(&self, loss: LossKind, w: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.samples();
        let scores = &self.features * w;
        let d1 = DVector::from_fn(scores.len(), |i, _| loss.deriv(self.labels[i], scores[i]));
        let grad = self.features.tr_mul(&d1) / n;
        let hess = match &self.gram {
            Some(g) => g.clone(),
            None => {
                let mut scaled = self.features.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= loss.second_deriv(self.labels[i], scores[i]);
                }
                self.features.tr_mul(&scaled) / n
            }
        };
        (grad, hess)
    }
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Linalg(format!("{what} is not positive definite")))
}

fn stacked_norm(parts: &[DVector<f64>]) -> f64 {
    parts.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
}

fn mean(parts: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(parts[0].len());
    for p in parts {
        m += p;
    }
    m / parts.len() as f64
}

/// The coupled objective `sum_t L_t(w_t) + gamma1/2 sum ||w_t||^2 + gamma2/2 sum ||w_t - w_bar||^2`.
struct Coupled<'a> {
    tasks: &'a [TaskData],
    loss: LossKind,
    gamma1: f64,
    gamma2: f64,
}

impl Coupled<'_> {
    fn value(&self, w: &[DVector<f64>]) -> f64 {
        let w_bar = mean(w);
        self.tasks
            .iter()
            .zip(w)
            .map(|(d, wt)| {
                d.loss_value(self.loss, wt)
                    + 0.5 * self.gamma1 * wt.norm_squared()
                    + 0.5 * self.gamma2 * (wt - &w_bar).norm_squared()
            })
            .sum()
    }

    /// Per-task gradients and the Newton direction.
    fn newton(&self, w: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let w_bar = mean(w);
        let t = w.len() as f64;
        let mut grads = Vec::with_capacity(w.len());
        let mut inverses = Vec::with_capacity(w.len());
        for (d, wt) in self.tasks.iter().zip(w) {
            let (g, mut h) = d.loss_derivatives(self.loss, wt);
            grads.push(g + wt * self.gamma1 + (wt - &w_bar) * self.gamma2);
            h.fill_diagonal_plus(self.gamma1 + self.gamma2);
            inverses.push(cholesky(h, "a per-task Hessian block")?.inverse());
        }
        let z: Vec<DVector<f64>> = inverses.iter().zip(&grads).map(|(hi, g)| -(hi * g)).collect();
        if self.gamma2 == 0.0 {
            return Ok((grads, z));
        }
        let k = w_bar.len();
        let mut schur = DMatrix::<f64>::identity(k, k);
        for hi in &inverses {
            schur -= hi * (self.gamma2 / t);
        }
        let d_bar = cholesky(schur, "the coupled Hessian")?.solve(&mean(&z));
        let dirs = inverses.iter().zip(z).map(|(hi, zt)| zt + hi * &d_bar * self.gamma2).collect();
        Ok((grads, dirs))
    }
}

trait FillDiagonal {
    fn fill_diagonal_plus(&mut self, v: f64);
}

impl FillDiagonal for DMatrix<f64> {
    fn fill_diagonal_plus(&mut self, v: f64) {
        for i in 0..self.nrows().min(self.ncols()) {
            self[(i, i)] += v;
        }
    }
}

/// Damped Newton with Armijo backtracking. `step` returns gradients and the
/// Newton direction at a point.
fn newton_loop<V, S>(
    start: Vec<DVector<f64>>,
    value: V,
    step: S,
    opts: &TrainOptions,
) -> Result<(Vec<DVector<f64>>, f64, f64, usize)>
where
    V: Fn(&[DVector<f64>]) -> f64,
    S: Fn(&[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)>,
{
    let mut w = start;
    let mut f = value(&w);
    for iter in 0..=opts.max_iterations {
        let (grads, dirs) = step(&w)?;
        let g_norm = stacked_norm(&grads);
        if g_norm < opts.grad_tol {
            return Ok((w, f, g_norm, iter));
        }
        if iter == opts.max_iterations {
            return Err(Error::NotConverged { iterations: iter, grad_norm: g_norm, objective: f });
        }
        let slope: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.dot(d)).sum();
        if slope >= 0.0 {
            return Err(Error::NotConverged { iterations: iter, grad_norm: g_norm, objective: f });
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<DVector<f64>> = w.iter().zip(&dirs).map(|(wt, d)| wt + d * s).collect();
            let ft = value(&trial);
            // Near the optimum the decrease drops below roundoff in f; accept
            // the full step there since the Newton step is then quadratically
            // convergent.
            if ft <= f + 1e-4 * s * slope || (s == 1.0 && (f - ft).abs() <= 1e-14 * f.abs().max(1.0)) {
                w = trial;
                f = ft.min(f);
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            return Err(Error::NotConverged { iterations: iter, grad_norm: g_norm, objective: f });
        }
    }
    unreachable!("the loop returns at iteration max_iterations")
}

fn check_inputs(ensemble: &TaskEnsemble, config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    if ensemble.num_tasks() != config.num_tasks || ensemble.known_dim != config.known_dim {
        return Err(Error::InvalidArgument(format!(
            "ensemble has {} tasks and k = {}, config has {} and {}",
            ensemble.num_tasks(),
            ensemble.known_dim,
            config.num_tasks,
            config.known_dim
        )));
    }
    Ok(())
}

fn finish(
    ensemble: &TaskEnsemble,
    (weights, objective_value, grad_norm, iterations): (Vec<DVector<f64>>, f64, f64, usize),
) -> TrainedModel {
    let embedded = weights.iter().map(|w| ensemble.embed(w)).collect();
    TrainedModel { weights, embedded, objective_value, grad_norm, iterations }
}

/// Minimizes the coupled multi-task objective from zero.
pub fn solve_multitask(ensemble: &TaskEnsemble, config: &ExperimentConfig) -> Result<TrainedModel> {
    solve_multitask_with(ensemble, config, &TrainOptions::default())
}

pub fn solve_multitask_with(
    ensemble: &TaskEnsemble,
    config: &ExperimentConfig,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    check_inputs(ensemble, config)?;
    let tasks: Vec<TaskData> =
        (0..config.num_tasks).map(|t| TaskData::new(ensemble, t, config.loss)).collect();
    let obj = Coupled { tasks: &tasks, loss: config.loss, gamma1: config.gamma1, gamma2: config.gamma2 };
    let start = vec![DVector::zeros(config.known_dim); config.num_tasks];
    let out = newton_loop(start, |w| obj.value(w), |w| obj.newton(w), opts)?;
    Ok(finish(ensemble, out))
}

/// Value of the multi-task objective at given per-task weights.
pub fn multitask_objective(
    ensemble: &TaskEnsemble,
    config: &ExperimentConfig,
    weights: &[DVector<f64>],
) -> Result<f64> {
    check_inputs(ensemble, config)?;
    let tasks: Vec<TaskData> =
        (0..config.num_tasks).map(|t| TaskData::new(ensemble, t, config.loss)).collect();
    let obj = Coupled { tasks: &tasks, loss: config.loss, gamma1: config.gamma1, gamma2: config.gamma2 };
    Ok(obj.value(weights))
}

/// Solves each task of the separate formulation
/// `L_t(w) + (gamma1 + gamma2)/2 ||w||^2 - gamma2 R / 2 (xi_bar . w)^2`,
/// where `xi_bar` is the unit restriction of the hidden vector to `S`.
pub fn solve_separate(
    ensemble: &TaskEnsemble,
    config: &ExperimentConfig,
    r_strength: f64,
) -> Result<TrainedModel> {
    solve_separate_with(ensemble, config, r_strength, &TrainOptions::default())
}

pub fn solve_separate_with(
    ensemble: &TaskEnsemble,
    config: &ExperimentConfig,
    r_strength: f64,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    check_inputs(ensemble, config)?;
    if !(0.0..=1.0).contains(&r_strength) {
        return Err(Error::InvalidArgument(format!("R must lie in [0, 1], got {r_strength}")));
    }
    let ridge = config.gamma1 + config.gamma2;
    let tilt = config.gamma2 * r_strength;
    let margin = ridge - tilt;
    if margin <= 0.0 {
        return Err(Error::NotStronglyConvex { margin });
    }
    let mut weights = Vec::with_capacity(config.num_tasks);
    let (mut total, mut grad_sq, mut iterations) = (0.0, 0.0, 0);
    for t in 0..config.num_tasks {
        let data = TaskData::new(ensemble, t, config.loss);
        let u = ensemble.hidden_known_unit(t);
        let value = |w: &[DVector<f64>]| {
            let w = &w[0];
            data.loss_value(config.loss, w) + 0.5 * ridge * w.norm_squared() - 0.5 * tilt * u.dot(w).powi(2)
        };
        let step = |w: &[DVector<f64>]| -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
            let w = &w[0];
            let (g, mut h) = data.loss_derivatives(config.loss, w);
            let g = g + w * ridge - &u * (tilt * u.dot(w));
            h.fill_diagonal_plus(ridge);
            h -= &u * u.transpose() * tilt;
            let d = -cholesky(h, "the separate-formulation Hessian")?.solve(&g);
            Ok((vec![g], vec![d]))
        };
        let (w, f, g, it) = newton_loop(vec![DVector::zeros(config.known_dim)], value, step, opts)?;
        weights.extend(w);
        total += f;
        grad_sq += g * g;
        iterations = iterations.max(it);
    }
    Ok(finish(ensemble, (weights, total, grad_sq.sqrt(), iterations)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_ensemble, ModelKind};

    fn config(tasks: usize, loss: LossKind, model: ModelKind, gamma2: f64) -> ExperimentConfig {
        ExperimentConfig {
            num_tasks: tasks,
            ambient_dim: 40,
            known_dim: 12,
            samples_per_task: (0..tasks).map(|t| 20 + 5 * t).collect(),
            rho: 0.7,
            gamma1: 0.05,
            gamma2,
            loss,
            model,
            seed: 3,
        }
    }

    #[test]
    fn squared_is_one_step() {
        let c = config(3, LossKind::Squared, ModelKind::LinearRegression, 0.8);
        let e = generate_ensemble(&c, 1, 0).unwrap();
        let m = solve_multitask(&e, &c).unwrap();
        assert_eq!(m.iterations, 1);
        assert!(m.grad_norm < 1e-10);
    }

    #[test]
    fn logistic_converges_with_monotone_objective() {
        let c = config(3, LossKind::Logistic, ModelKind::BinaryClassification, 0.8);
        let e = generate_ensemble(&c, 2, 0).unwrap();
        let m = solve_multitask(&e, &c).unwrap();
        assert!(m.grad_norm < 1e-8);
        let zero = vec![DVector::zeros(c.known_dim); 3];
        assert!(m.objective_value < multitask_objective(&e, &c, &zero).unwrap());
    }

    #[test]
    fn embedding_has_zero_tail() {
        let c = config(2, LossKind::Squared, ModelKind::BinaryClassification, 0.3);
        let e = generate_ensemble(&c, 4, 1).unwrap();
        let m = solve_multitask(&e, &c).unwrap();
        for (w, beta) in m.weights.iter().zip(&m.embedded) {
            assert_eq!(beta.rows(0, c.known_dim), w.rows(0, c.known_dim));
            assert!(beta.rows(c.known_dim, c.ambient_dim - c.known_dim).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn separate_rejects_nonconvex() {
        let mut c = config(2, LossKind::Squared, ModelKind::LinearRegression, 1.0);
        c.gamma1 = 0.0;
        let e = generate_ensemble(&c, 5, 0).unwrap();
        assert!(matches!(solve_separate(&e, &c, 1.0), Err(Error::NotStronglyConvex { .. })));
        assert!(solve_separate(&e, &c, 1.5).is_err());
    }

    #[test]
    fn iteration_cap_reported() {
        let c = config(2, LossKind::Logistic, ModelKind::BinaryClassification, 0.5);
        let e = generate_ensemble(&c, 6, 0).unwrap();
        let opts = TrainOptions { max_iterations: 1, grad_tol: 1e-14 };
        assert!(matches!(solve_multitask_with(&e, &c, &opts), Err(Error::NotConverged { .. })));
    }
}
