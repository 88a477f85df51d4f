//! Multi-task learning in the proportional high-dimensional regime.
//!
//! The crate has two halves that are meant to be overlaid:
//!
//! * the empirical side: synthetic Gaussian task ensembles ([`model`]),
//!   convex multi-task training ([`train`]) and exact test error of a trained
//!   predictor ([`generr`]);
//! * the asymptotic side: low-dimensional deterministic saddle-point problems
//!   whose solutions `(q*, r*)` predict the test error of the trained
//!   predictors as `p -> infinity` ([`theory`], [`generr`]).
//!
//! Both sides share the scalar loss kernel in [`losses`].

pub mod error;
pub mod generr;
pub mod losses;
pub mod model;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use losses::LossKind;
pub use model::{ExperimentConfig, ModelKind, TaskEnsemble};


pub use generr::{PredictionSource, TheoryPrediction};
pub use theory::{SaddleSolution, SaddleSolver, SolverOptions};
pub use train::{TrainOptions, TrainedModel};
