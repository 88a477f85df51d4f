use mtl_asymptotics::losses::LossKind;
use mtl_asymptotics::model::{generate_ensemble, ExperimentConfig, ModelKind, TaskEnsemble};
use mtl_asymptotics::train::{multitask_objective, solve_multitask, solve_separate};
use nalgebra::{DMatrix, DVector};

fn config(tasks: usize, p: usize, k: usize, n: usize, loss: LossKind, model: ModelKind) -> ExperimentConfig {
    ExperimentConfig {
        num_tasks: tasks,
        ambient_dim: p,
        known_dim: k,
        samples_per_task: vec![n; tasks],
        rho: 0.7,
        gamma1: 0.1,
        gamma2: 0.6,
        loss,
        model,
        seed: 0,
    }
}

fn ridge(e: &TaskEnsemble, t: usize, gamma: f64) -> DVector<f64> {
    let b = e.observed_features(t);
    let n = b.nrows() as f64;
    let a = b.transpose() * b / n + DMatrix::identity(b.ncols(), b.ncols()) * gamma;
    let rhs = b.transpose() * &e.labels[t] / n;
    a.lu().solve(&rhs).unwrap()
}

/// Cyclic coordinate descent with exact line minimization from three values;
/// exact per coordinate on a quadratic. Uses only objective values.
fn coordinate_oracle(f: impl Fn(&[DVector<f64>]) -> f64, tasks: usize, k: usize) -> Vec<DVector<f64>> {
    let mut w = vec![DVector::zeros(k); tasks];
    let h = 1e-3;
    for _ in 0..4000 {
        for t in 0..tasks {
            for i in 0..k {
                let f0 = f(&w);
                w[t][i] += h;
                let fp = f(&w);
                w[t][i] -= 2.0 * h;
                let fm = f(&w);
                w[t][i] += h;
                let curv = (fp - 2.0 * f0 + fm) / (h * h);
                w[t][i] -= (fp - fm) / (2.0 * h) / curv;
            }
        }
    }
    w
}

fn max_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

#[test]
fn no_coupling_gives_per_task_ridge() {
    for seed in 0..5 {
        let mut c = config(3, 60, 25, 40, LossKind::Squared, ModelKind::LinearRegression);
        c.gamma2 = 0.0;
        let e = generate_ensemble(&c, seed, 0).unwrap();
        let m = solve_multitask(&e, &c).unwrap();
        for t in 0..3 {
            assert!((&m.weights[t] - ridge(&e, t, c.gamma1)).amax() < 1e-10);
        }
    }
}

#[test]
fn single_task_is_ridge_for_any_coupling() {
    let mut c = config(1, 50, 20, 30, LossKind::Squared, ModelKind::LinearRegression);
    c.gamma2 = 5.0;
    let e = generate_ensemble(&c, 9, 0).unwrap();
    let m = solve_multitask(&e, &c).unwrap();
    assert!((&m.weights[0] - ridge(&e, 0, c.gamma1)).amax() < 1e-10);
}

#[test]
fn small_instance_matches_generic_minimizer() {
    let c = config(2, 8, 3, 5, LossKind::Squared, ModelKind::LinearRegression);
    let e = generate_ensemble(&c, 21, 0).unwrap();
    let m = solve_multitask(&e, &c).unwrap();
    let oracle = coordinate_oracle(|w| multitask_objective(&e, &c, w).unwrap(), 2, 3);
    assert!(max_diff(&m.weights, &oracle) < 1e-6, "{}", max_diff(&m.weights, &oracle));
}

#[test]
fn logistic_small_instance_matches_generic_minimizer() {
    let c = config(2, 8, 3, 6, LossKind::Logistic, ModelKind::BinaryClassification);
    let e = generate_ensemble(&c, 22, 0).unwrap();
    let m = solve_multitask(&e, &c).unwrap();
    let oracle = coordinate_oracle(|w| multitask_objective(&e, &c, w).unwrap(), 2, 3);
    assert!(max_diff(&m.weights, &oracle) < 1e-6, "{}", max_diff(&m.weights, &oracle));
}

#[test]
fn coupling_gradient_identity() {
    // grad of gamma2/2 sum_s ||w_s - w_bar||^2 w.r.t. w_t is gamma2 (w_t - w_bar):
    // compare finite differences of the full objective with the analytic gradient
    let c = config(3, 20, 6, 10, LossKind::Squared, ModelKind::LinearRegression);
    let e = generate_ensemble(&c, 5, 0).unwrap();
    let w: Vec<DVector<f64>> = (0..3).map(|t| DVector::from_fn(6, |i, _| ((t * 6 + i) as f64).sin())).collect();
    let w_bar = (&w[0] + &w[1] + &w[2]) / 3.0;
    let h = 1e-6;
    for t in 0..3 {
        let b = e.observed_features(t);
        let n = b.nrows() as f64;
        let analytic = b.transpose() * (b * &w[t] - &e.labels[t]) / n + &w[t] * c.gamma1 + (&w[t] - &w_bar) * c.gamma2;
        for i in 0..6 {
            let mut up = w.clone();
            up[t][i] += h;
            let mut dn = w.clone();
            dn[t][i] -= h;
            let fd = (multitask_objective(&e, &c, &up).unwrap() - multitask_objective(&e, &c, &dn).unwrap()) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6, "{fd} vs {}", analytic[i]);
        }
    }
}

#[test]
fn permutation_equivariance() {
    let mut c = config(3, 40, 10, 20, LossKind::Logistic, ModelKind::BinaryClassification);
    c.samples_per_task = vec![20, 30, 25];
    let e = generate_ensemble(&c, 3, 0).unwrap();
    let m = solve_multitask(&e, &c).unwrap();
    let perm = [2, 0, 1];
    let mut pe = e.clone();
    let mut pc = c.clone();
    for (dst, &src) in perm.iter().enumerate() {
        pe.features[dst] = e.features[src].clone();
        pe.labels[dst] = e.labels[src].clone();
        pe.hidden_vectors[dst] = e.hidden_vectors[src].clone();
        pe.task_vectors[dst] = e.task_vectors[src].clone();
        pc.samples_per_task[dst] = c.samples_per_task[src];
    }
    let pm = solve_multitask(&pe, &pc).unwrap();
    for (dst, &src) in perm.iter().enumerate() {
        assert!((&pm.weights[dst] - &m.weights[src]).amax() < 1e-9);
    }
}

#[test]
fn coupling_pulls_tasks_together() {
    let mut c = config(3, 40, 15, 25, LossKind::Squared, ModelKind::BinaryClassification);
    let e = generate_ensemble(&c, 8, 0).unwrap();
    let mut last = f64::INFINITY;
    for g2 in [0.0, 0.1, 0.5, 2.0, 10.0, 100.0] {
        c.gamma2 = g2;
        let m = solve_multitask(&e, &c).unwrap();
        let w_bar = (&m.weights[0] + &m.weights[1] + &m.weights[2]) / 3.0;
        let spread = m.weights.iter().map(|w| (w - &w_bar).norm()).fold(0.0, f64::max);
        assert!(spread < last, "gamma2 = {g2}: {spread} >= {last}");
        last = spread;
    }
}

#[test]
fn separate_endpoints() {
    let c = config(2, 40, 12, 30, LossKind::Squared, ModelKind::LinearRegression);
    let e = generate_ensemble(&c, 4, 0).unwrap();
    // R = 0: ridge with strength gamma1 + gamma2
    let s = solve_separate(&e, &c, 0.0).unwrap();
    for t in 0..2 {
        assert!((&s.weights[t] - ridge(&e, t, c.gamma1 + c.gamma2)).amax() < 1e-10);
    }
    // gamma2 = 0: traditional formulation whatever R is
    let mut c0 = c.clone();
    c0.gamma2 = 0.0;
    let trad = solve_multitask(&e, &c0).unwrap();
    for r in [0.0, 0.5, 1.0] {
        let s = solve_separate(&e, &c0, r).unwrap();
        assert!(max_diff(&s.weights, &trad.weights) < 1e-10);
    }
}

#[test]
fn separate_full_alignment_matches_generic_minimizer() {
    let mut c = config(1, 8, 3, 5, LossKind::Squared, ModelKind::LinearRegression);
    c.rho = 1.0;
    let e = generate_ensemble(&c, 12, 0).unwrap();
    let s = solve_separate(&e, &c, 1.0).unwrap();
    let u = e.hidden_known_unit(0);
    let b = e.observed_features(0);
    let f = |w: &[DVector<f64>]| {
        let res = b * &w[0] - &e.labels[0];
        0.5 * res.norm_squared() / 5.0 + 0.5 * (c.gamma1 + c.gamma2) * w[0].norm_squared()
            - 0.5 * c.gamma2 * u.dot(&w[0]).powi(2)
    };
    let oracle = coordinate_oracle(f, 1, 3);
    assert!(max_diff(&s.weights, &oracle) < 1e-6);
}
