//! Generalization error on the theory side (from `c0, c1, c2`) and on the
//! empirical side (from trained weights), and the `R(rho)` fixed point.
//!
//! For a test point `a ~ N(0, I_p)` the pair `(a . xi, a . beta)` is bivariate
//! Gaussian, so both errors have closed forms:
//! regression gives `||xi - beta||^2`, classification gives the sign-mismatch
//! probability `arccos(cos(xi, beta)) / pi`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, TaskEnsemble};
use crate::theory::{GeneralParams, SaddleSolution, SaddleSolver, ScalarParams, ScalarProblem};
use crate::train::TrainedModel;

/// Which deterministic problem produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Symmetric,
    InfiniteTasks,
    General,
    Separate,
}

/// Limit constants of one task and the resulting generalization error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub gen_error: f64,
    pub source: PredictionSource,
}

impl TheoryPrediction {
    /// `c1 = q sqrt(kappa/alpha)`, `c2 = sqrt((1 - kappa/alpha) q^2 + r^2)`.
    pub fn from_order_params(
        q: f64,
        r: f64,
        kappa_over_alpha: f64,
        rho: f64,
        model: ModelKind,
        source: PredictionSource,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&kappa_over_alpha) {
            return Err(Error::InvalidArgument(format!(
                "kappa/alpha must lie in [0, 1], got {kappa_over_alpha}"
            )));
        }
        let c0 = 1.0 / rho.sqrt();
        let c1 = q * kappa_over_alpha.sqrt();
        let c2 = ((1.0 - kappa_over_alpha) * q * q + r * r).sqrt();
        let gen_error = theory_gen_error(c0, c1, c2, model)?;
        Ok(Self { c0, c1, c2, gen_error, source })
    }

    /// Prediction for task `task` of a saddle solution.
    pub fn from_solution(
        sol: &SaddleSolution,
        task: usize,
        kappa_over_alpha: f64,
        rho: f64,
        model: ModelKind,
        source: PredictionSource,
    ) -> Result<Self> {
        if task >= sol.q.len() {
            return Err(Error::InvalidArgument(format!(
                "task {task} out of range for a solution with {} tasks",
                sol.q.len()
            )));
        }
        Self::from_order_params(sol.q[task], sol.r[task], kappa_over_alpha, rho, model, source)
    }
}

/// `(1/4^theta) E[(phi(c0 G1) - phi(c1 G1 + c2 G2))^2]` in closed form.
pub fn theory_gen_error(c0: f64, c1: f64, c2: f64, model: ModelKind) -> Result<f64> {
    if !(c2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("c2 must be >= 0, got {c2}")));
    }
    match model {
        ModelKind::LinearRegression => {
            if !c0.is_finite() {
                return Err(Error::InvalidArgument("regression needs a finite c0".into()));
            }
            Ok((c0 - c1).powi(2) + c2 * c2)
        }
        ModelKind::BinaryClassification => {
            if c1 == 0.0 && c2 == 0.0 {
                return Ok(0.5);
            }
            // arccos(c1 / sqrt(c1^2 + c2^2)) without the cancellation near 0
            Ok(c2.atan2(c1) / PI)
        }
    }
}

fn check_task(ensemble: &TaskEnsemble, model: &TrainedModel, task: usize) -> Result<()> {
    if task >= ensemble.num_tasks() || task >= model.embedded.len() {
        return Err(Error::InvalidArgument(format!(
            "task {task} out of range for {} tasks",
            ensemble.num_tasks()
        )));
    }
    Ok(())
}

/// Exact test error of `beta_t` against `xi_t` over `a ~ N(0, I_p)`.
pub fn empirical_gen_error(model: &TrainedModel, ensemble: &TaskEnsemble, task: usize) -> Result<f64> {
    check_task(ensemble, model, task)?;
    let xi = &ensemble.hidden_vectors[task];
    let beta = &model.embedded[task];
    Ok(match ensemble.model {
        ModelKind::LinearRegression => (xi - beta).norm_squared(),
        ModelKind::BinaryClassification => {
            let (nx, nb) = (xi.norm(), beta.norm());
            if nx == 0.0 || nb == 0.0 {
                0.5
            } else {
                // angle = 2 atan2(|x - y|, |x + y|) for unit x, y; stable at both ends
                let (x, y) = (xi / nx, beta / nb);
                2.0 * (&x - &y).norm().atan2((&x + &y).norm()) / PI
            }
        }
    })
}

/// `q = xi_bar_S . w` and `r = ||w - q xi_bar_S||` for one trained task.
pub fn empirical_order_params(model: &TrainedModel, ensemble: &TaskEnsemble, task: usize) -> Result<(f64, f64)> {
    check_task(ensemble, model, task)?;
    let u = ensemble.hidden_known_unit(task);
    let w = &model.weights[task];
    let q = u.dot(w);
    Ok((q, (w - &u * q).norm()))
}

/// Theory prediction from one of the scalar problems.
pub fn scalar_prediction(
    solver: &SaddleSolver,
    params: &ScalarParams,
    problem: ScalarProblem,
) -> Result<(SaddleSolution, TheoryPrediction)> {
    let sol = solver.solve_scalar(params, problem)?;
    let source = match problem {
        ScalarProblem::Symmetric { .. } => PredictionSource::Symmetric,
        ScalarProblem::InfiniteTasks => PredictionSource::InfiniteTasks,
        ScalarProblem::Separate { .. } => PredictionSource::Separate,
    };
    let pred = TheoryPrediction::from_solution(&sol, 0, params.kappa / params.alpha, params.rho, params.model, source)?;
    Ok((sol, pred))
}

/// Per-task theory predictions of the general problem.
pub fn general_predictions(
    solver: &SaddleSolver,
    params: &GeneralParams,
) -> Result<(SaddleSolution, Vec<TheoryPrediction>)> {
    let sol = solver.solve_general(params)?;
    let preds = (0..params.num_tasks())
        .map(|t| {
            TheoryPrediction::from_solution(
                &sol,
                t,
                params.kappas[t] / params.alphas[t],
                params.rho,
                params.model,
                PredictionSource::General,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sol, preds))
}

/// Tolerance on the generalization-error gap of the `R(rho)` search.
pub const R_GAP_TOLERANCE: f64 = 1e-6;

/// Outcome of the `R(rho)` search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoFixedPoint {
    pub r_strength: f64,
    /// `err_separate(R) - err_infinite` at the returned `R`.
    pub gap: f64,
    /// Error of the infinite-task problem the search matched.
    pub target_error: f64,
    pub evaluations: usize,
}

/// `R in [0, 1]` such that the separate problem matches the infinite-task
/// generalization error. `params.gamma2` must be positive.
pub fn solve_r_of_rho(solver: &SaddleSolver, params: &ScalarParams) -> Result<RhoFixedPoint> {
    if !(params.gamma2 > 0.0) {
        return Err(Error::InvalidArgument("R(rho) is undefined for gamma2 = 0".into()));
    }
    let (_, target) = scalar_prediction(solver, params, ScalarProblem::InfiniteTasks)?;
    let target_error = target.gen_error;
    let mut evaluations = 0;
    let mut gap = |r: f64| -> Result<f64> {
        evaluations += 1;
        let (_, p) = scalar_prediction(solver, params, ScalarProblem::Separate { r_strength: r })?;
        Ok(p.gen_error - target_error)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut g_lo = gap(lo)?;
    if g_lo.abs() <= R_GAP_TOLERANCE {
        return Ok(RhoFixedPoint { r_strength: lo, gap: g_lo, target_error, evaluations: 1 });
    }
    let g_hi = gap(hi)?;
    if g_hi.abs() <= R_GAP_TOLERANCE {
        return Ok(RhoFixedPoint { r_strength: hi, gap: g_hi, target_error, evaluations: 2 });
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::NoBracket { gap_at_zero: g_lo, gap_at_one: g_hi });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let g_mid = gap(mid)?;
        if g_mid.abs() <= R_GAP_TOLERANCE || hi - lo < 1e-12 {
            drop(gap);
            return Ok(RhoFixedPoint { r_strength: mid, gap: g_mid, target_error, evaluations });
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    const REG: ModelKind = ModelKind::LinearRegression;
    const CLS: ModelKind = ModelKind::BinaryClassification;

    #[test]
    fn closed_form_examples() {
        assert_eq!(theory_gen_error(1.3, 1.3, 0.0, REG).unwrap(), 0.0);
        assert!((theory_gen_error(1.0, 0.0, 2.0, CLS).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(theory_gen_error(1.0, 0.0, 0.0, CLS).unwrap(), 0.5);
        assert!((theory_gen_error(f64::INFINITY, 0.3, 0.1, CLS).unwrap() - (0.3f64 / 0.1f64.hypot(0.3)).acos() / PI).abs() < 1e-15);
        assert!(theory_gen_error(1.0, 0.5, -0.1, REG).is_err());
        assert!(theory_gen_error(f64::INFINITY, 0.5, 0.1, REG).is_err());
    }

    #[test]
    fn prediction_constants() {
        let p = TheoryPrediction::from_order_params(0.9, 0.4, 0.25, 0.8, REG, PredictionSource::Symmetric).unwrap();
        assert!((p.c0 - 1.0 / 0.8f64.sqrt()).abs() < 1e-15);
        assert!((p.c1 - 0.45).abs() < 1e-15);
        assert!((p.c2 - (0.75 * 0.81 + 0.16f64).sqrt()).abs() < 1e-15);
        assert!((p.c1 * p.c1 + p.c2 * p.c2 - (0.81 + 0.16)).abs() < 1e-14);
    }

    fn fake_model(ensemble: &TaskEnsemble, betas: Vec<DVector<f64>>) -> TrainedModel {
        let weights = betas.iter().map(|b| b.rows(0, ensemble.known_dim).into_owned()).collect();
        TrainedModel { weights, embedded: betas, objective_value: 0.0, grad_norm: 0.0, iterations: 0 }
    }

    fn ensemble(model: ModelKind) -> TaskEnsemble {
        let c = crate::model::ExperimentConfig::symmetric(
            2,
            60,
            2.0,
            0.5,
            0.6,
            0.1,
            0.1,
            crate::losses::LossKind::Squared,
            model,
        );
        crate::model::generate_ensemble(&c, 11, 0).unwrap()
    }

    #[test]
    fn exact_recovery_and_antipode() {
        for model in [REG, CLS] {
            let e = ensemble(model);
            let m = fake_model(&e, e.hidden_vectors.clone());
            assert!(empirical_gen_error(&m, &e, 1).unwrap().abs() < 1e-15);
        }
        let e = ensemble(CLS);
        let m = fake_model(&e, e.hidden_vectors.iter().map(|x| -x).collect());
        assert!((empirical_gen_error(&m, &e, 0).unwrap() - 1.0).abs() < 1e-15);
        let m = fake_model(&e, vec![DVector::zeros(60); 2]);
        assert_eq!(empirical_gen_error(&m, &e, 0).unwrap(), 0.5);
        assert!(empirical_gen_error(&m, &e, 2).is_err());
    }

    #[test]
    fn zero_predictor_regression_error_is_signal_energy() {
        let e = ensemble(REG);
        let m = fake_model(&e, vec![DVector::zeros(60); 2]);
        let xi = &e.hidden_vectors[0];
        assert!((empirical_gen_error(&m, &e, 0).unwrap() - xi.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn order_params_decompose_weights() {
        let e = ensemble(REG);
        let w = DVector::from_fn(e.known_dim, |i, _| (i as f64 * 0.37).sin());
        let m = fake_model(&e, vec![e.embed(&w), e.embed(&w)]);
        let (q, r) = empirical_order_params(&m, &e, 0).unwrap();
        assert!((q * q + r * r - w.norm_squared()).abs() < 1e-12);
    }
}
