//! The three iterative estimators: ML-EM, MAP-EM with the variance-mean
//! Gaussian-mixture reweighting, and ECM coordinate descent with the scalar
//! lq prox; plus convergence control, zero-locking, and objective tracking.
//!
//! Every step is an E-step (conditional moments at the current iterate) and an
//! M-step. The M-steps are:
//! - ML: solve `B theta = a` over all coordinates;
//! - MAP: solve `(B + K) theta = a` restricted to the unlocked coordinates,
//!   then lock anything that entered the zero neighbourhood (irreversibly);
//! - ECM: one cyclic sweep of scalar prox updates; never locks, so zero
//!   estimates may resurface on later sweeps.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterEstimate, ProblemSpec};
use crate::penalty::{self, PenaltyFamily, PenaltySpec};
use crate::smoother::{build_grid, compute_moments, smooth, GridConfig, MomentSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MlEm,
    MapEm,
    EcmCd,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::MlEm => "ml_em",
            Method::MapEm => "map_em",
            Method::EcmCd => "ecm_cd",
        }
    }
}

/// Iteration budget, tolerances, estimator selection, and grid profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Sup-norm step tolerance.
    pub tol_theta: f64,
    /// Absolute objective-change tolerance.
    pub tol_obj: f64,
    pub method: Method,
    pub penalty: PenaltySpec,
    pub grid: GridConfig,
    /// Reserved for randomized initialization strategies; the default ridge
    /// initializer is deterministic and ignores it.
    pub seed: u64,
}

impl SolverOptions {
    pub fn new(method: Method, penalty: PenaltySpec) -> Self {
        SolverOptions {
            max_iters: 300,
            tol_theta: 1e-8,
            tol_obj: 1e-10,
            method,
            penalty,
            grid: GridConfig::standard(),
            seed: 0,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.tol_theta > 0.0) || !(self.tol_obj > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be > 0".into()));
        }
        self.penalty.validate()?;
        match (self.method, self.penalty.family) {
            (Method::MapEm, PenaltyFamily::None) => Err(Error::InvalidParameter(
                "map_em needs a ridge or lq penalty".into(),
            )),
            (Method::EcmCd, PenaltyFamily::Ridge) => Err(Error::InvalidParameter(
                "ecm_cd supports the none and lq penalties".into(),
            )),
            _ => Ok(()),
        }?;
        let _ = p;
        Ok(())
    }
}

/// E-step outputs: conditional moments plus the marginal log-likelihood at
/// the expansion point.
#[derive(Debug, Clone)]
pub struct EStepOutput {
    pub moments: MomentSet,
    pub loglik: f64,
}

/// Anything that can answer an E-step query at a parameter value. The grid
/// smoother is the production source; a fully observed design is the
/// degenerate one used by oracle instances.
pub trait MomentSource: Sync {
    /// (n, p).
    fn dims(&self) -> (usize, usize);
    fn e_step(&self, theta: &Array1<f64>) -> Result<EStepOutput>;
}

/// E-steps through the grid forward-backward smoother.
pub struct SmootherSource<'a> {
    spec: &'a ProblemSpec,
    grid: crate::smoother::GridSpec,
}

impl<'a> SmootherSource<'a> {
    pub fn new(spec: &'a ProblemSpec, grid_config: &GridConfig) -> Result<Self> {
        spec.responses()?;
        let grid = build_grid(
            &spec.latent,
            grid_config.num_points,
            grid_config.half_width_sigmas,
        )?;
        Ok(SmootherSource { spec, grid })
    }

    pub fn grid(&self) -> &crate::smoother::GridSpec {
        &self.grid
    }
}

impl MomentSource for SmootherSource<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.spec.n, self.spec.p)
    }

    fn e_step(&self, theta: &Array1<f64>) -> Result<EStepOutput> {
        let posterior = smooth(self.spec, theta.view(), &self.grid)?;
        let moments = compute_moments(self.spec, &posterior, &self.grid)?;
        Ok(EStepOutput {
            moments,
            loglik: posterior.loglik,
        })
    }
}

/// Degenerate E-steps for a fully observed design: moments are plain design
/// statistics and the log-likelihood is the exact Gaussian one.
pub struct ObservedSource {
    x: Array2<f64>,
    y: Array1<f64>,
    noise_var: f64,
    moments: MomentSet,
}

impl ObservedSource {
    pub fn new(x: Array2<f64>, y: Array1<f64>, noise_var: f64) -> Result<Self> {
        let moments = MomentSet::from_design(&x, &y, noise_var)?;
        Ok(ObservedSource {
            x,
            y,
            noise_var,
            moments,
        })
    }
}

impl MomentSource for ObservedSource {
    fn dims(&self) -> (usize, usize) {
        self.x.dim()
    }

    fn e_step(&self, theta: &Array1<f64>) -> Result<EStepOutput> {
        let (n, p) = self.x.dim();
        if theta.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, expected p = {p}",
                theta.len()
            )));
        }
        let resid = &self.y - &self.x.dot(theta);
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        let loglik = -0.5 * rss / self.noise_var
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI * self.noise_var).ln();
        Ok(EStepOutput {
            moments: self.moments.clone(),
            loglik,
        })
    }
}

/// Solve a symmetric positive definite system, reporting the smallest
/// eigenvalue on failure instead of regularizing silently.
fn solve_spd(a_mat: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let d = a_mat.nrows();
    let m = nalgebra::DMatrix::from_fn(d, d, |i, j| a_mat[(i, j)]);
    match nalgebra::Cholesky::new(m.clone()) {
        Some(ch) => {
            let b = nalgebra::DVector::from_fn(d, |i, _| rhs[i]);
            let x = ch.solve(&b);
            Ok(Array1::from_iter(x.iter().copied()))
        }
        None => {
            let eig = nalgebra::SymmetricEigen::new(m);
            let min_eig = eig
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |acc, &v| acc.min(v));
            Err(Error::SingularSystem { min_eig })
        }
    }
}

/// Lock every unlocked coordinate inside the eps-neighbourhood of zero at
/// exactly zero; already-locked coordinates stay locked.
pub fn zero_lock(est: &ParameterEstimate, eps: f64) -> Result<ParameterEstimate> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "zero-lock eps must be > 0, got {eps}"
        )));
    }
    let mut theta = est.theta().clone();
    let mut locks = est.locked_zeros().clone();
    for j in 0..theta.len() {
        if !locks.contains(&j) && theta[j].abs() <= eps {
            theta[j] = 0.0;
            locks.insert(j);
        }
    }
    ParameterEstimate::with_locks(theta, locks)
}

/// ML M-step: maximize the quadratic expected complete-data log-likelihood,
/// i.e. solve `B theta = a` over all coordinates. No locking in ML mode.
pub fn em_ml_update(moments: &MomentSet, est: &ParameterEstimate) -> Result<ParameterEstimate> {
    let p = est.len();
    if moments.gram.nrows() != p {
        return Err(Error::DimensionMismatch(format!(
            "gram is {} x {}, expected {p} x {p}",
            moments.gram.nrows(),
            moments.gram.ncols()
        )));
    }
    let theta = solve_spd(&moments.gram, &moments.rhs)?;
    Ok(ParameterEstimate::new(theta))
}

/// MAP M-step: build the prior reweighting at the current iterate, solve
/// `(B + K) theta = a` restricted to the unlocked coordinates (locked rows
/// and columns are deleted, not sentinel-inflated), then extend the locked
/// set with anything that entered the zero neighbourhood.
pub fn map_em_update(
    moments: &MomentSet,
    est: &ParameterEstimate,
    pen: &PenaltySpec,
) -> Result<ParameterEstimate> {
    let p = est.len();
    let active = est.active_indices();
    if active.is_empty() {
        return Ok(est.clone());
    }
    let k_diag = penalty::reweighting_diag(est, pen)?;

    let d = active.len();
    let mut sys = Array2::zeros((d, d));
    let mut rhs = Array1::zeros(d);
    for (r, &jr) in active.iter().enumerate() {
        for (c, &jc) in active.iter().enumerate() {
            sys[(r, c)] = moments.gram[(jr, jc)];
        }
        sys[(r, r)] += k_diag[jr];
        rhs[r] = moments.rhs[jr];
    }
    let solution = solve_spd(&sys, &rhs)?;

    let mut theta = Array1::zeros(p);
    for (r, &j) in active.iter().enumerate() {
        theta[j] = solution[r];
    }
    let stepped = ParameterEstimate::with_locks(theta, est.locked_zeros().clone())?;
    zero_lock(&stepped, pen.zero_lock_eps)
}

/// ECM M-step: one full cyclic sweep of conditional maximizations. Coordinate
/// j is refit against the mixed iterate (already-updated coordinates before
/// it, previous values after it) and passed through the scalar lq prox with
/// per-coordinate weight `pen.weight / B_jj`. Never locks.
pub fn ecm_cd_update(
    moments: &MomentSet,
    est: &ParameterEstimate,
    pen: &PenaltySpec,
) -> Result<ParameterEstimate> {
    if pen.family == PenaltyFamily::Ridge {
        return Err(Error::InvalidParameter(
            "ecm_cd supports the none and lq penalties".into(),
        ));
    }
    let p = est.len();
    let mut theta = est.theta().clone();
    for j in 0..p {
        let bjj = moments.gram[(j, j)];
        if !(bjj > 0.0) {
            return Err(Error::DegenerateCoordinate {
                index: j,
                value: bjj,
            });
        }
        let mut cross = 0.0;
        for l in 0..p {
            if l != j {
                cross += moments.gram[(j, l)] * theta[l];
            }
        }
        let target = (moments.rhs[j] - cross) / bjj;
        theta[j] = if pen.weight == 0.0 {
            target
        } else {
            penalty::lq_scalar_prox(target, pen.weight / bjj, pen.q)?
        };
    }
    Ok(ParameterEstimate::new(theta))
}

/// One ML-EM step: E-step at the current iterate, then the ML M-step.
pub fn em_ml_step(src: &dyn MomentSource, est: &ParameterEstimate) -> Result<ParameterEstimate> {
    let e = src.e_step(est.theta())?;
    em_ml_update(&e.moments, est)
}

/// One MAP-EM step: E-step at the current iterate, reweighted solve, lock.
pub fn map_em_step(
    src: &dyn MomentSource,
    est: &ParameterEstimate,
    pen: &PenaltySpec,
) -> Result<ParameterEstimate> {
    let e = src.e_step(est.theta())?;
    map_em_update(&e.moments, est, pen)
}

/// One ECM step: E-step at the current iterate, then one cyclic prox sweep.
pub fn ecm_cd_step(
    src: &dyn MomentSource,
    est: &ParameterEstimate,
    pen: &PenaltySpec,
) -> Result<ParameterEstimate> {
    let e = src.e_step(est.theta())?;
    ecm_cd_update(&e.moments, est, pen)
}

/// Deterministic shared initializer: the ridge solution
/// `(B0 + (2 / tau^2) I) theta = a0` with moments taken at theta = 0. Chosen
/// to start every estimator from the same point, bounded away from the zero
/// singularity of the lq reweighting.
pub fn ridge_init(src: &dyn MomentSource, tau: f64) -> Result<Array1<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "init tau must be > 0, got {tau}"
        )));
    }
    let (_, p) = src.dims();
    let e = src.e_step(&Array1::zeros(p))?;
    let mut sys = e.moments.gram.clone();
    let k = 2.0 / (tau * tau);
    for j in 0..p {
        sys[(j, j)] += k;
    }
    solve_spd(&sys, &e.moments.rhs)
}

/// Per-iteration record of the run.
#[derive(Debug, Clone)]
pub struct EmTrace {
    /// Starting point (after any initial locking).
    pub init: ParameterEstimate,
    /// Marginal log-likelihood at the starting point.
    pub init_loglik: f64,
    /// Tracked objective at the starting point.
    pub init_objective: f64,
    /// Post-step estimates, one per iteration taken.
    pub iterates: Vec<ParameterEstimate>,
    /// Objective at each iterate: the marginal log-likelihood for ML, plus
    /// the log-prior over unlocked coordinates for the penalized methods.
    pub objectives: Vec<f64>,
    /// Marginal log-likelihood at each iterate.
    pub logliks: Vec<f64>,
    /// E-step duration per iteration.
    pub moments_time: Vec<Duration>,
    /// M-step duration per iteration.
    pub solve_time: Vec<Duration>,
    /// Iteration index (0-based) at which a stopping rule fired.
    pub converged_at: Option<usize>,
}

impl EmTrace {
    pub fn final_estimate(&self) -> Option<&ParameterEstimate> {
        self.iterates.last()
    }

    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }
}

/// A failed run still carries the trace up to the failure point.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: EmTrace,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "estimator failed after {} iterations: {}",
            self.partial.iterations(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Objective tracked for an iterate: log-likelihood for ML, MAP objective
/// (log-likelihood plus log-prior over unlocked coordinates) otherwise.
pub fn tracked_objective(
    loglik: f64,
    est: &ParameterEstimate,
    method: Method,
    pen: &PenaltySpec,
) -> Result<f64> {
    match method {
        Method::MlEm => Ok(loglik),
        Method::MapEm | Method::EcmCd => {
            let active: Vec<f64> = est
                .active_indices()
                .iter()
                .map(|&j| est.theta()[j])
                .collect();
            Ok(loglik + penalty::log_prior(Array1::from_vec(active).view(), pen)?)
        }
    }
}

/// Run the selected estimator from `theta_init` until the sup-norm step or the
/// objective change drops below tolerance, or the iteration budget runs out.
/// Deterministic given its inputs.
pub fn run_estimator(
    spec: &ProblemSpec,
    theta_init: &Array1<f64>,
    opts: &SolverOptions,
) -> Result<EmTrace, Box<RunFailure>> {
    let src = match SmootherSource::new(spec, &opts.grid) {
        Ok(s) => s,
        Err(e) => return Err(Box::new(RunFailure::immediate(theta_init, e))),
    };
    run_estimator_on(&src, theta_init, opts)
}

/// [`run_estimator`] over an arbitrary moment source.
pub fn run_estimator_on(
    src: &dyn MomentSource,
    theta_init: &Array1<f64>,
    opts: &SolverOptions,
) -> Result<EmTrace, Box<RunFailure>> {
    let fail = |trace: EmTrace, error: Error| {
        Err(Box::new(RunFailure {
            partial: trace,
            error,
        }))
    };

    let (_, p) = src.dims();
    if let Err(e) = opts.validate(p) {
        return Err(Box::new(RunFailure::immediate(theta_init, e)));
    }
    if theta_init.len() != p {
        return Err(Box::new(RunFailure::immediate(
            theta_init,
            Error::DimensionMismatch(format!(
                "theta_init has length {}, expected p = {p}",
                theta_init.len()
            )),
        )));
    }

    let mut est = ParameterEstimate::new(theta_init.clone());
    if opts.method == Method::MapEm {
        // Guard the lq reweighting against initial values already inside the
        // zero neighbourhood.
        match zero_lock(&est, opts.penalty.zero_lock_eps) {
            Ok(e) => est = e,
            Err(e) => return Err(Box::new(RunFailure::immediate(theta_init, e))),
        }
    }

    let mut trace = EmTrace {
        init: est.clone(),
        init_loglik: f64::NAN,
        init_objective: f64::NAN,
        iterates: Vec::new(),
        objectives: Vec::new(),
        logliks: Vec::new(),
        moments_time: Vec::new(),
        solve_time: Vec::new(),
        converged_at: None,
    };

    let mut estep = match src.e_step(est.theta()) {
        Ok(e) => e,
        Err(e) => return fail(trace, e),
    };
    let mut obj_prev = match tracked_objective(estep.loglik, &est, opts.method, &opts.penalty) {
        Ok(o) => o,
        Err(e) => return fail(trace, e),
    };
    trace.init_loglik = estep.loglik;
    trace.init_objective = obj_prev;

    for iter in 0..opts.max_iters {
        let t_solve = Instant::now();
        let stepped = match opts.method {
            Method::MlEm => em_ml_update(&estep.moments, &est),
            Method::MapEm => map_em_update(&estep.moments, &est, &opts.penalty),
            Method::EcmCd => ecm_cd_update(&estep.moments, &est, &opts.penalty),
        };
        let new_est = match stepped {
            Ok(e) => e,
            Err(e) => return fail(trace, e),
        };
        let solve_elapsed = t_solve.elapsed();

        let t_moments = Instant::now();
        let new_estep = match src.e_step(new_est.theta()) {
            Ok(e) => e,
            Err(e) => return fail(trace, e),
        };
        let moments_elapsed = t_moments.elapsed();

        let obj = match tracked_objective(new_estep.loglik, &new_est, opts.method, &opts.penalty) {
            Ok(o) => o,
            Err(e) => return fail(trace, e),
        };

        let step_sup = new_est
            .theta()
            .iter()
            .zip(est.theta().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);

        trace.iterates.push(new_est.clone());
        trace.objectives.push(obj);
        trace.logliks.push(new_estep.loglik);
        trace.solve_time.push(solve_elapsed);
        trace.moments_time.push(moments_elapsed);

        let obj_change = (obj - obj_prev).abs();
        est = new_est;
        estep = new_estep;
        obj_prev = obj;

        if step_sup <= opts.tol_theta || obj_change <= opts.tol_obj {
            trace.converged_at = Some(iter);
            break;
        }
    }
    Ok(trace)
}

impl RunFailure {
    fn immediate(theta_init: &Array1<f64>, error: Error) -> Self {
        RunFailure {
            partial: EmTrace {
                init: ParameterEstimate::new(theta_init.clone()),
                init_loglik: f64::NAN,
                init_objective: f64::NAN,
                iterates: Vec::new(),
                objectives: Vec::new(),
                logliks: Vec::new(),
                moments_time: Vec::new(),
                solve_time: Vec::new(),
                converged_at: None,
            },
            error,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_fully_observed, SimConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn observed_source(
        n: usize,
        p: usize,
        seed: u64,
        noise_var: f64,
    ) -> (ObservedSource, Array1<f64>) {
        let theta = Array1::from_shape_fn(p, |j| {
            if j % 3 == 2 {
                0.0
            } else {
                1.0 - 0.3 * j as f64
            }
        });
        let ds = simulate_fully_observed(n, p, &theta, noise_var, seed).unwrap();
        (
            ObservedSource::new(ds.x, ds.y, noise_var.max(1.0)).unwrap(),
            theta,
        )
    }

    #[test]
    fn ml_update_reduces_to_ols_when_fully_observed() {
        let theta_true = array![1.0, -2.0, 0.5];
        let ds = simulate_fully_observed(40, 3, &theta_true, 0.0, 11).unwrap();
        // Assumed noise variance is irrelevant for the ML solve; it cancels.
        let src = ObservedSource::new(ds.x.clone(), ds.y.clone(), 1.0).unwrap();
        let est = em_ml_step(&src, &ParameterEstimate::new(Array1::zeros(3))).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(est.theta()[j], theta_true[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn ml_update_scalar_case() {
        let x = Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let y = array![2.0, 3.9, 6.1];
        let src = ObservedSource::new(x.clone(), y.clone(), 0.5).unwrap();
        let e = src.e_step(&array![0.0]).unwrap();
        let est = em_ml_update(&e.moments, &ParameterEstimate::new(array![0.0])).unwrap();
        assert_abs_diff_eq!(
            est.theta()[0],
            e.moments.rhs[0] / e.moments.gram[(0, 0)],
            epsilon = 1e-14
        );
    }

    #[test]
    fn ml_update_residual_is_tiny() {
        let (src, _) = observed_source(30, 4, 5, 0.2);
        let e = src.e_step(&Array1::zeros(4)).unwrap();
        let est = em_ml_update(&e.moments, &ParameterEstimate::new(Array1::zeros(4))).unwrap();
        let resid = &e.moments.gram.dot(est.theta()) - &e.moments.rhs;
        assert!(resid
            .iter()
            .all(|r| r.abs() <= 1e-10 * e.moments.rhs.iter().map(|v| v.abs()).fold(1.0, f64::max)));
    }

    #[test]
    fn singular_system_reports_min_eigenvalue() {
        // Rank-deficient design: duplicated column.
        let x =
            Array2::from_shape_vec((4, 2), vec![1.0, 1.0, 2.0, 2.0, -1.0, -1.0, 0.5, 0.5]).unwrap();
        let y = array![1.0, 2.0, -1.0, 0.5];
        let src = ObservedSource::new(x, y, 1.0).unwrap();
        let err = em_ml_step(&src, &ParameterEstimate::new(Array1::zeros(2)));
        match err {
            Err(Error::SingularSystem { min_eig }) => assert!(min_eig.abs() < 1e-9),
            other => panic!("expected SingularSystem, got {other:?}"),
        }
    }

    #[test]
    fn ridge_map_step_matches_closed_form_and_is_stationary() {
        let theta_true = array![1.0, -0.8, 0.6, 1.2, -1.5, 0.9, 0.7];
        let noise_var = 0.25;
        let ds = simulate_fully_observed(100, 7, &theta_true, noise_var, 21).unwrap();
        let src = ObservedSource::new(ds.x.clone(), ds.y.clone(), noise_var).unwrap();
        let pen = PenaltySpec::ridge(1.0).unwrap();

        // Closed form (X'X / s2 + (2/tau^2) I)^-1 X'y / s2.
        let p = 7;
        let mut sys = ds.x.t().dot(&ds.x) / noise_var;
        for j in 0..p {
            sys[(j, j)] += 2.0;
        }
        let rhs = ds.x.t().dot(&ds.y) / noise_var;
        let closed = solve_spd(&sys, &rhs).unwrap();

        let step1 = map_em_step(&src, &ParameterEstimate::new(Array1::zeros(p)), &pen).unwrap();
        for j in 0..p {
            assert_abs_diff_eq!(step1.theta()[j], closed[j], epsilon = 1e-10);
        }
        let step2 = map_em_step(&src, &step1, &pen).unwrap();
        for j in 0..p {
            assert_abs_diff_eq!(step2.theta()[j], step1.theta()[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn weak_lq_map_step_approaches_ml_step() {
        // tau -> infinity drives the reweighting to zero.
        let (src, _) = observed_source(50, 4, 9, 0.3);
        let start = ParameterEstimate::new(array![0.5, -0.4, 0.3, 0.2]);
        let ml = em_ml_step(&src, &start).unwrap();
        let pen = PenaltySpec::lq(1.0, 1e9).unwrap();
        let map = map_em_step(&src, &start, &pen).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(map.theta()[j], ml.theta()[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn ecm_weightless_cycle_is_gauss_seidel() {
        let (src, _) = observed_source(40, 3, 13, 0.2);
        let e = src.e_step(&Array1::zeros(3)).unwrap();
        let start = ParameterEstimate::new(array![0.1, 0.2, -0.3]);
        let pen = PenaltySpec::none();
        let swept = ecm_cd_update(&e.moments, &start, &pen).unwrap();

        // Hand-rolled Gauss-Seidel sweep on B theta = a.
        let b = &e.moments.gram;
        let a = &e.moments.rhs;
        let mut theta = start.theta().clone();
        for j in 0..3 {
            let mut cross = 0.0;
            for l in 0..3 {
                if l != j {
                    cross += b[(j, l)] * theta[l];
                }
            }
            theta[j] = (a[j] - cross) / b[(j, j)];
        }
        for j in 0..3 {
            assert_abs_diff_eq!(swept.theta()[j], theta[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn ecm_single_coordinate_is_plain_prox() {
        let x = Array2::from_shape_vec((5, 1), vec![1.0, -2.0, 0.5, 1.5, -1.0]).unwrap();
        let y = array![0.9, -2.2, 0.4, 1.4, -1.1];
        let src = ObservedSource::new(x, y, 1.0).unwrap();
        let e = src.e_step(&array![0.0]).unwrap();
        let pen = PenaltySpec::lq(0.5, 0.8).unwrap();
        let got = ecm_cd_update(&e.moments, &ParameterEstimate::new(array![0.0]), &pen).unwrap();
        let b11 = e.moments.gram[(0, 0)];
        let expected =
            penalty::lq_scalar_prox(e.moments.rhs[0] / b11, pen.weight / b11, pen.q).unwrap();
        assert_abs_diff_eq!(got.theta()[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn ecm_rejects_degenerate_diagonal() {
        let moments = MomentSet {
            design_mean: Array2::zeros((2, 2)),
            gram: Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 0.0, 1.0]).unwrap(),
            rhs: array![1.0, 1.0],
        };
        let pen = PenaltySpec::lq(0.5, 1.0).unwrap();
        let err = ecm_cd_update(&moments, &ParameterEstimate::new(array![0.0, 0.0]), &pen);
        assert!(matches!(
            err,
            Err(Error::DegenerateCoordinate { index: 0, .. })
        ));
    }

    #[test]
    fn map_update_with_everything_locked_is_a_no_op() {
        let (src, _) = observed_source(20, 3, 8, 0.2);
        let e = src.e_step(&Array1::zeros(3)).unwrap();
        let est = ParameterEstimate::with_locks(Array1::zeros(3), [0, 1, 2].into_iter().collect())
            .unwrap();
        let pen = PenaltySpec::lq(0.5, 0.5).unwrap();
        let out = map_em_update(&e.moments, &est, &pen).unwrap();
        assert_eq!(out, est);
    }

    #[test]
    fn zero_lock_thresholds_and_is_idempotent() {
        let est = ParameterEstimate::new(array![1e-4, 0.5]);
        let locked = zero_lock(&est, 1e-3).unwrap();
        assert_eq!(locked.theta()[0], 0.0);
        assert!(locked.is_locked(0));
        assert!(!locked.is_locked(1));
        let again = zero_lock(&locked, 1e-3).unwrap();
        assert_eq!(again, locked);
        assert!(zero_lock(&est, 0.0).is_err());
    }

    #[test]
    fn run_estimator_respects_iteration_budget() {
        let (src, _) = observed_source(30, 3, 3, 0.4);
        let mut opts = SolverOptions::new(Method::MlEm, PenaltySpec::none());
        opts.max_iters = 1;
        let init = array![0.1, 0.1, 0.1];
        let trace = run_estimator_on(&src, &init, &opts).unwrap();
        assert_eq!(trace.iterations(), 1);
        assert_eq!(trace.objectives.len(), 1);
        assert_eq!(trace.logliks.len(), 1);
    }

    #[test]
    fn run_estimator_is_deterministic() {
        let config = SimConfig {
            n: 48,
            ..SimConfig::default()
        }
        .with_seed(17);
        let ds = crate::sim::simulate(&config).unwrap();
        let spec = ds.problem().unwrap();
        let mut opts = SolverOptions::new(Method::MapEm, PenaltySpec::lq(0.5, 0.5).unwrap());
        opts.max_iters = 15;
        opts.grid = GridConfig {
            num_points: 101,
            half_width_sigmas: 5.0,
        };
        let init = Array1::from_elem(7, 0.3);
        let a = run_estimator(&spec, &init, &opts).unwrap();
        let b = run_estimator(&spec, &init, &opts).unwrap();
        assert_eq!(a.iterates.len(), b.iterates.len());
        for (x, y) in a.iterates.iter().zip(b.iterates.iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(a.objectives, b.objectives);
    }

    #[test]
    fn map_em_locked_set_is_monotone() {
        let config = SimConfig {
            n: 64,
            ..SimConfig::default()
        }
        .with_seed(2);
        let ds = crate::sim::simulate(&config).unwrap();
        let spec = ds.problem().unwrap();
        let mut opts = SolverOptions::new(Method::MapEm, PenaltySpec::lq(0.1, 0.1).unwrap());
        opts.max_iters = 60;
        opts.grid = GridConfig {
            num_points: 101,
            half_width_sigmas: 5.0,
        };
        let src = SmootherSource::new(&spec, &opts.grid).unwrap();
        let init = ridge_init(&src, 1.0).unwrap();
        let trace = run_estimator(&spec, &init, &opts).unwrap();
        let mut previous: std::collections::BTreeSet<usize> = trace.init.locked_zeros().clone();
        for it in &trace.iterates {
            assert!(previous.is_subset(it.locked_zeros()));
            previous = it.locked_zeros().clone();
        }
    }

    #[test]
    fn invalid_method_penalty_combinations_fail_fast() {
        let (src, _) = observed_source(20, 3, 1, 0.2);
        let init = array![0.2, 0.2, 0.2];
        let opts = SolverOptions::new(Method::MapEm, PenaltySpec::none());
        assert!(run_estimator_on(&src, &init, &opts).is_err());
        let opts = SolverOptions::new(Method::EcmCd, PenaltySpec::ridge(1.0).unwrap());
        assert!(run_estimator_on(&src, &init, &opts).is_err());
    }
}
