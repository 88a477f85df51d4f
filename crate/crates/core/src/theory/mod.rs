//! Deterministic saddle-point problems that predict the asymptotic behavior
//! of the multi-task program, and the Gaussian quadrature behind them.
//!
//! Every problem has the form `min_{q, r >= 0} max_eta f(q, r, eta)` where
//! `f` contains the Gaussian expectation of a Moreau envelope. The scalar
//! problems (symmetric, infinite-`T`, separate) have one `(q, r, eta)`
//! triple; the general problem has one per task, coupled through the
//! `T x T` matrices of [`coupling`].

pub mod coupling;
pub mod expectation;
pub mod problems;
pub mod quadrature;
pub mod saddle;

pub use coupling::{coupling_matrices, CouplingMatrices};
pub use expectation::{expected_moreau, Channel, Moments};
pub use problems::{
    solve_general, solve_infinite_tasks, solve_separate_asymptotic, solve_symmetric, GeneralParams,
    SaddleSolver, ScalarParams, ScalarProblem,
};
pub use quadrature::QuadratureGrid;
pub use saddle::{ActiveBound, SaddleSolution, SolverOptions};
