//! Sparse parameter estimation in latent-variable linear regressions.
//!
//! The observation model is a linear regression `y = X theta + noise` in which
//! the regressor matrix depends on a scalar hidden AR(1) state, so `X` is never
//! observed directly. Estimation runs through the EM algorithm: the E-step
//! computes conditional moments of `X` under a grid-discretized smoother for
//! the hidden chain, and the M-step solves a linear system (ML), a reweighted
//! linear system derived from a variance-mean Gaussian-mixture prior (MAP with
//! an lq-norm penalty, `0 < q <= 1`), or a cyclic coordinate update with the
//! scalar nonconvex lq proximal operator (ECM).
//!
//! Crate layout:
//! - [`model`]: problem description and the state-dependent design rows.
//! - [`smoother`]: grid forward-backward smoothing and E-step moments.
//! - [`penalty`]: penalty kernels, prior reweighting, and the scalar lq prox.
//! - [`solvers`]: the three iterative estimators with zero-locking.
//! - [`sim`]: reproducible data generation for experiments and oracles.

pub mod error;
pub mod model;
pub mod penalty;
pub mod sim;
pub mod smoother;
pub mod solvers;

pub use error::Error;
pub use model::{design_row, estimate_mse, LatentDynamics, ParameterEstimate, ProblemSpec};
pub use penalty::{lq_scalar_prox, PenaltyFamily, PenaltySpec};
pub use sim::{simulate, simulate_fully_observed, Dataset, ObservedDataset, SimConfig};
pub use smoother::{
    build_grid, compute_moments, smooth, GridConfig, GridSpec, LatentPosterior, MomentSet,
};
pub use solvers::{run_estimator, EmTrace, Method, MomentSource, SolverOptions};
