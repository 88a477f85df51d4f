//! Problem configuration and synthetic task generation.
//!
//! Every task `t` has a hidden vector `xi_t = sigma * v_t + v_0` with `v_0` and
//! `v_t` drawn uniformly on the unit sphere of `R^p` and
//! `sigma = sqrt(1 / rho - 1)`. Features are i.i.d. standard Gaussian and labels
//! are `y = phi(a . xi_t)` computed with all `p` coordinates. The learner only
//! sees the `k` coordinates in the subset `S`.
//!
//! `S` is always the first `k` coordinates. The feature distribution is
//! rotation invariant and the hidden vectors are isotropic, so any fixed subset
//! of size `k` gives the same joint law.

use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;

/// How labels are produced from the latent score `a . xi` and how predictions
/// are read out of `beta . a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `phi` and `phi_hat` are the identity.
    LinearRegression,
    /// `phi` and `phi_hat` are the sign function.
    BinaryClassification,
}

impl ModelKind {
    /// The label channel `phi`. `sign(0)` is taken as `+1`.
    pub fn link(self, score: f64) -> f64 {
        match self {
            ModelKind::LinearRegression => score,
            ModelKind::BinaryClassification => {
                if score >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::LinearRegression => write!(f, "linear_regression"),
            ModelKind::BinaryClassification => write!(f, "binary_classification"),
        }
    }
}

/// Full description of one multi-task experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_tasks: usize,
    pub ambient_dim: usize,
    pub known_dim: usize,
    pub samples_per_task: Vec<usize>,
    pub rho: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub loss: LossKind,
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Equal-sample-size configuration with `n = round(p / alpha)` samples per
    /// task and `k = round(kappa * n)` known coordinates.
    #[allow(clippy::too_many_arguments)]
    pub fn symmetric(
        num_tasks: usize,
        ambient_dim: usize,
        alpha: f64,
        kappa: f64,
        rho: f64,
        gamma1: f64,
        gamma2: f64,
        loss: LossKind,
        model: ModelKind,
    ) -> Self {
        let n = ((ambient_dim as f64) / alpha).round().max(1.0) as usize;
        let k = ((kappa * n as f64).round() as usize).clamp(1, ambient_dim);
        Self {
            num_tasks,
            ambient_dim,
            known_dim: k,
            samples_per_task: vec![n; num_tasks],
            rho,
            gamma1,
            gamma2,
            loss,
            model,
            seed: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::InvalidConfig(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_tasks == 0 {
            return bad("num_tasks must be positive".into());
        }
        if self.ambient_dim == 0 {
            return bad("ambient_dim must be positive".into());
        }
        if self.known_dim == 0 || self.known_dim > self.ambient_dim {
            return bad(format!(
                "known_dim must lie in [1, ambient_dim = {}], got {}",
                self.ambient_dim, self.known_dim
            ));
        }
        if self.samples_per_task.len() != self.num_tasks {
            return bad(format!(
                "samples_per_task has {} entries for {} tasks",
                self.samples_per_task.len(),
                self.num_tasks
            ));
        }
        if self.samples_per_task.iter().any(|&n| n == 0) {
            return bad("every task needs at least one sample".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.gamma1 >= 0.0 && self.gamma1.is_finite()) {
            return bad(format!("gamma1 must be finite and >= 0, got {}", self.gamma1));
        }
        if !(self.gamma2 >= 0.0 && self.gamma2.is_finite()) {
            return bad(format!("gamma2 must be finite and >= 0, got {}", self.gamma2));
        }
        if self.loss == LossKind::Logistic && self.model == ModelKind::LinearRegression {
            return bad("the logistic loss needs +-1 labels; use binary_classification".into());
        }
        if self.gamma1 == 0.0 && self.loss == LossKind::Logistic {
            log::warn!(
                "gamma1 = 0 with the logistic loss: the minimizer does not exist on separable data"
            );
        }
        Ok(())
    }

    /// `alpha_t = p / n_t`.
    pub fn alpha(&self, task: usize) -> f64 {
        self.ambient_dim as f64 / self.samples_per_task[task] as f64
    }

    /// `kappa_t = k / n_t`.
    pub fn kappa(&self, task: usize) -> f64 {
        self.known_dim as f64 / self.samples_per_task[task] as f64
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.num_tasks).map(|t| self.alpha(t)).collect()
    }

    pub fn kappas(&self) -> Vec<f64> {
        (0..self.num_tasks).map(|t| self.kappa(t)).collect()
    }

    /// `sigma = sqrt(1 / rho - 1)`; infinite at `rho = 0`.
    pub fn sigma(&self) -> f64 {
        sigma_from_rho(self.rho)
    }

    pub fn is_symmetric(&self) -> bool {
        self.samples_per_task.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn sigma_from_rho(rho: f64) -> f64 {
    (1.0 / rho - 1.0).max(0.0).sqrt()
}

/// Independent random streams used by the generator. Each tag owns a disjoint
/// block of the ChaCha keystream for a given `(seed, trial)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    SharedVector,
    TaskVectors,
    Features(usize),
    /// Free-form streams for consumers outside the generator (test sets, etc.).
    Auxiliary(u16),
}

impl StreamTag {
    fn block(self) -> u128 {
        match self {
            StreamTag::SharedVector => 0,
            StreamTag::TaskVectors => 1,
            StreamTag::Auxiliary(i) => 2 + i as u128,
            StreamTag::Features(t) => (1 << 16) + t as u128,
        }
    }
}

/// Counter-based generator keyed by `(seed, trial, tag)`.
///
/// The seed fixes the ChaCha key, the trial index selects the ChaCha stream and
/// the tag selects a `2^40`-word window inside that stream.
pub fn stream_rng(seed: u64, trial: u64, tag: StreamTag) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng.set_word_pos(tag.block() << 40);
    rng
}

/// Uniform draw on the unit sphere of `R^dim`: a standard Gaussian vector
/// divided by its norm.
pub fn unit_sphere_vector<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DVector<f64>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("sphere dimension must be positive".into()));
    }
    loop {
        let v: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 0.0 {
            return Ok(v / norm);
        }
    }
}

/// One draw of the multi-task generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEnsemble {
    pub model: ModelKind,
    pub known_dim: usize,
    pub shared_vector: DVector<f64>,
    pub task_vectors: Vec<DVector<f64>>,
    pub hidden_vectors: Vec<DVector<f64>>,
    /// Full `n_t x p` feature matrices. The learner sees [`Self::observed_features`].
    pub features: Vec<DMatrix<f64>>,
    pub labels: Vec<DVector<f64>>,
}

impl TaskEnsemble {
    pub fn num_tasks(&self) -> usize {
        self.labels.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.shared_vector.len()
    }

    pub fn samples(&self, task: usize) -> usize {
        self.labels[task].len()
    }

    /// The `n_t x k` block of observed columns, a view into the full matrix.
    pub fn observed_features(&self, task: usize) -> DMatrixView<'_, f64> {
        self.features[task].columns(0, self.known_dim)
    }

    /// `xi_t` restricted to the known coordinates `S`.
    pub fn hidden_known(&self, task: usize) -> DVector<f64> {
        self.hidden_vectors[task].rows(0, self.known_dim).into_owned()
    }

    /// `xi_t(S) / ||xi_t(S)||`: restrict first, then normalize.
    pub fn hidden_known_unit(&self, task: usize) -> DVector<f64> {
        let v = self.hidden_known(task);
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            v
        }
    }

    /// Embed a length-`k` weight vector into `R^p` with zeros on the unknown
    /// coordinates.
    pub fn embed(&self, weights: &DVector<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.ambient_dim());
        beta.rows_mut(0, self.known_dim).copy_from(weights);
        beta
    }
}

/// Draw an ensemble. Deterministic in `(config, seed, trial)`.
pub fn generate_ensemble(config: &ExperimentConfig, seed: u64, trial: u64) -> Result<TaskEnsemble> {
    config.validate()?;
    if config.rho <= 0.0 {
        return Err(Error::InvalidConfig(
            "rho = 0 makes the hidden vectors unbounded; sample ensembles with rho > 0".into(),
        ));
    }
    let p = config.ambient_dim;
    let sigma = config.sigma();

    let mut rng = stream_rng(seed, trial, StreamTag::SharedVector);
    let shared = unit_sphere_vector(p, &mut rng)?;

    let mut rng = stream_rng(seed, trial, StreamTag::TaskVectors);
    let task_vectors = (0..config.num_tasks)
        .map(|_| unit_sphere_vector(p, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let hidden: Vec<DVector<f64>> = task_vectors.iter().map(|v| v * sigma + &shared).collect();

    let mut features = Vec::with_capacity(config.num_tasks);
    let mut labels = Vec::with_capacity(config.num_tasks);
    for (t, xi) in hidden.iter().enumerate() {
        let n = config.samples_per_task[t];
        let mut rng = stream_rng(seed, trial, StreamTag::Features(t));
        let mut a = DMatrix::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                a[(i, j)] = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
        }
        let y = (&a * xi).map(|s| config.model.link(s));
        features.push(a);
        labels.push(y);
    }

    Ok(TaskEnsemble {
        model: config.model,
        known_dim: config.known_dim,
        shared_vector: shared,
        task_vectors,
        hidden_vectors: hidden,
        features,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            num_tasks: 3,
            ambient_dim: 500,
            known_dim: 200,
            samples_per_task: vec![100, 100, 50],
            rho: 0.8,
            gamma1: 0.01,
            gamma2: 0.5,
            loss: LossKind::Squared,
            model: ModelKind::LinearRegression,
            seed: 7,
        }
    }

    #[test]
    fn sigma_from_similarity() {
        assert_eq!(sigma_from_rho(1.0), 0.0);
        assert!((sigma_from_rho(0.8) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rho_one_gives_identical_hidden_vectors() {
        let mut c = small_config();
        c.rho = 1.0;
        let e = generate_ensemble(&c, 3, 0).unwrap();
        for xi in &e.hidden_vectors {
            assert_eq!(xi, &e.shared_vector);
        }
    }

    #[test]
    fn same_seed_same_ensemble() {
        let c = small_config();
        let a = generate_ensemble(&c, 11, 4).unwrap();
        let b = generate_ensemble(&c, 11, 4).unwrap();
        assert_eq!(a, b);
        let other = generate_ensemble(&c, 11, 5).unwrap();
        assert_ne!(a.shared_vector, other.shared_vector);
    }

    #[test]
    fn streams_are_disjoint() {
        use rand::RngCore;
        let mut a = stream_rng(1, 0, StreamTag::SharedVector);
        let mut b = stream_rng(1, 0, StreamTag::TaskVectors);
        let mut c = stream_rng(1, 1, StreamTag::SharedVector);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
    }

    #[test]
    fn unit_norms_and_hidden_norm_identity() {
        let c = small_config();
        let e = generate_ensemble(&c, 5, 0).unwrap();
        assert!((e.shared_vector.norm() - 1.0).abs() < 1e-12);
        let sigma = c.sigma();
        for (v, xi) in e.task_vectors.iter().zip(&e.hidden_vectors) {
            assert!((v.norm() - 1.0).abs() < 1e-12);
            let expected = sigma * sigma + 2.0 * sigma * v.dot(&e.shared_vector) + 1.0;
            assert!((xi.norm_squared() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_labels_are_signs() {
        let mut c = small_config();
        c.model = ModelKind::BinaryClassification;
        let e = generate_ensemble(&c, 2, 0).unwrap();
        for y in &e.labels {
            assert!(y.iter().all(|&v| v == 1.0 || v == -1.0));
        }
    }

    #[test]
    fn labels_use_all_coordinates() {
        let c = small_config();
        let e = generate_ensemble(&c, 9, 0).unwrap();
        let full = &e.features[0] * &e.hidden_vectors[0];
        assert_eq!(full, e.labels[0]);
        let partial = e.observed_features(0) * e.hidden_known(0);
        assert!((full - partial).norm() > 1.0);
    }

    #[test]
    fn regression_label_variance_matches_hidden_norm() {
        let mut c = small_config();
        c.num_tasks = 1;
        c.samples_per_task = vec![20_000];
        c.ambient_dim = 50;
        c.known_dim = 10;
        let e = generate_ensemble(&c, 1, 0).unwrap();
        let y = &e.labels[0];
        let var = y.norm_squared() / y.len() as f64;
        let target = e.hidden_vectors[0].norm_squared();
        // Var of the sample second moment is 2 target^2 / n.
        let tol = 5.0 * target * (2.0 / y.len() as f64).sqrt();
        assert!((var - target).abs() < tol, "{var} vs {target}");
    }

    #[test]
    fn sphere_dim_one_and_zero() {
        let mut rng = stream_rng(0, 0, StreamTag::Auxiliary(0));
        for _ in 0..20 {
            let v = unit_sphere_vector(1, &mut rng).unwrap();
            assert!(v[0] == 1.0 || v[0] == -1.0);
        }
        assert!(unit_sphere_vector(0, &mut rng).is_err());
    }

    #[test]
    fn sphere_mean_concentrates() {
        // 10^4 draws of dimension 10^4 is the large version of this check; the
        // same bound 3 / sqrt(dim * draws) on the mean of all coordinates holds
        // at any size.
        let dim = 1000;
        let draws = 1000;
        let mut rng = stream_rng(42, 0, StreamTag::Auxiliary(1));
        let mut sum = DVector::<f64>::zeros(dim);
        for _ in 0..draws {
            let v = unit_sphere_vector(dim, &mut rng).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-12);
            sum += v;
        }
        let grand_mean = sum.sum() / (dim * draws) as f64;
        assert!(grand_mean.abs() < 3.0 / ((dim * draws) as f64).sqrt());
        // Each coordinate has variance 1 / dim per draw.
        let per_coord_sd = (1.0 / (dim as f64 * draws as f64)).sqrt();
        let max_dev = sum.iter().map(|s| (s / draws as f64).abs()).fold(0.0, f64::max);
        assert!(max_dev < 6.0 * per_coord_sd);
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        assert!(c.validate().is_ok());
        c.known_dim = 501;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.samples_per_task.pop();
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.rho = 1.5;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.gamma2 = -1.0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.rho = 0.0;
        assert!(c.validate().is_ok());
        assert!(generate_ensemble(&c, 0, 0).is_err());
    }

    #[test]
    fn overparameterized_is_legal() {
        let mut c = small_config();
        c.known_dim = 400;
        c.samples_per_task = vec![50; 3];
        assert!(c.validate().is_ok());
        assert!(c.kappa(0) > 1.0);
    }

    #[test]
    fn toml_round_trip() {
        let c = small_config();
        let text = c.to_toml_string();
        assert!(text.contains("loss = \"squared\""));
        assert!(text.contains("model = \"linear_regression\""));
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(ExperimentConfig::from_toml_str("num_tasks = 1").is_err());
    }
}
