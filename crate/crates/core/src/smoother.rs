//! Grid-discretized forward-backward smoothing of the scalar hidden chain and
//! the E-step conditional moments.
//!
//! The chain is discretized on an equally spaced symmetric grid spanning a
//! multiple of the stationary standard deviation; transition and initial
//! densities are evaluated at the nodes and integrals replaced by trapezoidal
//! quadrature. The forward pass is normalized per step (scaled forward
//! algorithm) with accumulated log scalers, so the marginal log-likelihood is
//! exact up to quadrature and nothing underflows at realistic lengths.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::model::{gaussian_logpdf, LatentDynamics, ProblemSpec};

/// Grid accuracy profile: node count and half-width in stationary sigmas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub num_points: usize,
    pub half_width_sigmas: f64,
}

impl GridConfig {
    /// Standard profile used by the experiments.
    pub fn standard() -> Self {
        GridConfig {
            num_points: 201,
            half_width_sigmas: 5.0,
        }
    }

    /// High-accuracy profile (doubled nodes, wider span).
    pub fn high() -> Self {
        GridConfig {
            num_points: 401,
            half_width_sigmas: 6.0,
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig::standard()
    }
}

/// Discretization of the hidden-state space: strictly increasing nodes,
/// symmetric about 0 (odd count, so 0 is a node), with trapezoidal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    nodes: Array1<f64>,
    weights: Array1<f64>,
}

impl GridSpec {
    /// Build from explicit nodes and weights, validating the invariants.
    pub fn from_parts(nodes: Array1<f64>, weights: Array1<f64>) -> Result<Self> {
        let m = nodes.len();
        if m < 3 || m.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "grid needs an odd number of nodes >= 3, got {m}"
            )));
        }
        if weights.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} nodes",
                weights.len(),
                m
            )));
        }
        for i in 1..m {
            if !(nodes[i] > nodes[i - 1]) {
                return Err(Error::InvalidParameter(
                    "grid nodes must be strictly increasing".into(),
                ));
            }
        }
        for i in 0..m {
            if (nodes[i] + nodes[m - 1 - i]).abs() > 1e-12 {
                return Err(Error::InvalidParameter(
                    "grid nodes must be symmetric about 0".into(),
                ));
            }
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter(
                "grid weights must be positive".into(),
            ));
        }
        Ok(GridSpec { nodes, weights })
    }

    pub fn num_points(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &Array1<f64> {
        &self.nodes
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }
}

/// Equally spaced grid over +/- `half_width_sigmas` stationary standard
/// deviations of the chain, with trapezoidal quadrature weights.
pub fn build_grid(
    latent: &LatentDynamics,
    num_points: usize,
    half_width_sigmas: f64,
) -> Result<GridSpec> {
    latent.validate()?;
    if num_points < 3 || num_points.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "grid needs an odd number of nodes >= 3, got {num_points}"
        )));
    }
    if !(half_width_sigmas > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "half_width_sigmas must be > 0, got {half_width_sigmas}"
        )));
    }
    let span = half_width_sigmas * latent.stationary_var().sqrt();
    let m = num_points;
    let delta = 2.0 * span / (m - 1) as f64;
    let mut nodes = Array1::zeros(m);
    // Mirror the lower half so symmetry is exact in floating point.
    for i in 0..m / 2 {
        let x = -span + i as f64 * delta;
        nodes[i] = x;
        nodes[m - 1 - i] = -x;
    }
    nodes[m / 2] = 0.0;
    let mut weights = Array1::from_elem(m, delta);
    weights[0] = 0.5 * delta;
    weights[m - 1] = 0.5 * delta;
    GridSpec::from_parts(nodes, weights)
}

/// Per-step smoothed marginals of the hidden state plus the marginal
/// log-likelihood of the responses.
#[derive(Debug, Clone)]
pub struct LatentPosterior {
    /// n x M matrix; row k holds `p(z_k = node_m | y)`, summing to 1.
    pub marginals: Array2<f64>,
    /// Quadrature approximation of `log p(y | theta)`.
    pub loglik: f64,
}

impl LatentPosterior {
    /// Posterior mean of `h(z_k)` at step `k`.
    pub fn expect(&self, k: usize, grid: &GridSpec, h: impl Fn(f64) -> f64) -> f64 {
        self.marginals
            .row(k)
            .iter()
            .zip(grid.nodes().iter())
            .map(|(g, x)| g * h(*x))
            .sum()
    }
}

/// Per-step log emission density `log p(y_k | z_k = z)`.
pub trait Emission {
    fn log_emission(&self, k: usize, z: f64) -> f64;
}

/// The production emission: `y_k ~ N(sin(omega k / n + z) u_k' theta, sigma2)`.
pub struct RegressionEmission<'a> {
    spec: &'a ProblemSpec,
    /// Cached `u_k' theta` per step.
    projections: Array1<f64>,
}

impl<'a> RegressionEmission<'a> {
    pub fn new(spec: &'a ProblemSpec, theta: ArrayView1<'a, f64>) -> Result<Self> {
        if theta.len() != spec.p {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, expected p = {}",
                theta.len(),
                spec.p
            )));
        }
        let projections = spec.inputs.dot(&theta);
        Ok(RegressionEmission { spec, projections })
    }
}

impl Emission for RegressionEmission<'_> {
    fn log_emission(&self, k: usize, z: f64) -> f64 {
        let y = self
            .spec
            .responses
            .as_ref()
            .expect("responses checked upstream");
        let mean = (self.spec.phase(k) + z).sin() * self.projections[k];
        gaussian_logpdf(y[k], mean, self.spec.noise_var_obs)
    }
}

/// Linear-Gaussian emission `y_k ~ N(z_k, noise_var)`; the variant whose exact
/// smoother is available in closed form, used to validate the grid.
pub struct DirectEmission<'a> {
    pub y: ArrayView1<'a, f64>,
    pub noise_var: f64,
}

impl Emission for DirectEmission<'_> {
    fn log_emission(&self, k: usize, z: f64) -> f64 {
        gaussian_logpdf(self.y[k], z, self.noise_var)
    }
}

/// Forward-backward smoothing of the sine-modulated regression model at the
/// given parameter value.
pub fn smooth(
    spec: &ProblemSpec,
    theta: ArrayView1<f64>,
    grid: &GridSpec,
) -> Result<LatentPosterior> {
    spec.responses()?;
    let emission = RegressionEmission::new(spec, theta)?;
    smooth_chain(&spec.latent, &emission, grid, spec.n)
}

/// Forward-backward smoothing of an AR(1) chain observed through an arbitrary
/// per-step emission, on the given grid.
pub fn smooth_chain(
    latent: &LatentDynamics,
    emission: &dyn Emission,
    grid: &GridSpec,
    n: usize,
) -> Result<LatentPosterior> {
    latent.validate()?;
    if n < 1 {
        return Err(Error::InvalidParameter("need n >= 1".into()));
    }
    let m = grid.num_points();
    let nodes = grid.nodes();
    let weights = grid.weights();

    // Transition density evaluated at node pairs: trans[(to, from)].
    let trans = Array2::from_shape_fn((m, m), |(to, from)| {
        gaussian_logpdf(
            nodes[to],
            latent.ar_coeff * nodes[from],
            latent.noise_var_state,
        )
        .exp()
    });

    // Emissions, max-subtracted per step so g never underflows to all zeros.
    let mut emissions = Array2::zeros((n, m));
    let mut log_shifts = Array1::zeros(n);
    for k in 0..n {
        let mut row_max = f64::NEG_INFINITY;
        for i in 0..m {
            let le = emission.log_emission(k, nodes[i]);
            if !le.is_finite() && le != f64::NEG_INFINITY {
                return Err(Error::NonFinite("emission log density"));
            }
            emissions[(k, i)] = le;
            row_max = row_max.max(le);
        }
        if !row_max.is_finite() {
            return Err(Error::NonFinite("emission row entirely degenerate"));
        }
        log_shifts[k] = row_max;
        for i in 0..m {
            emissions[(k, i)] = (emissions[(k, i)] - row_max).exp();
        }
    }

    // Scaled forward pass.
    let mut alphas = Array2::zeros((n, m));
    let mut loglik = 0.0;
    {
        let mut a0 = Array1::zeros(m);
        for i in 0..m {
            let prior = gaussian_logpdf(nodes[i], latent.init_mean, latent.init_var).exp();
            a0[i] = weights[i] * prior * emissions[(0, i)];
        }
        let c: f64 = a0.sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NonFinite("forward normalizer"));
        }
        a0 /= c;
        loglik += c.ln() + log_shifts[0];
        alphas.row_mut(0).assign(&a0);
    }
    for k in 1..n {
        let pred = trans.dot(&alphas.row(k - 1));
        let mut ak = Array1::zeros(m);
        for i in 0..m {
            ak[i] = weights[i] * emissions[(k, i)] * pred[i];
        }
        let c: f64 = ak.sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NonFinite("forward normalizer"));
        }
        ak /= c;
        loglik += c.ln() + log_shifts[k];
        alphas.row_mut(k).assign(&ak);
    }

    // Backward pass, rescaled per step; scaling cancels in the marginals.
    let mut marginals = Array2::zeros((n, m));
    let mut beta = Array1::from_elem(m, 1.0);
    {
        let mut g = alphas.row(n - 1).to_owned();
        let s: f64 = g.sum();
        g /= s;
        marginals.row_mut(n - 1).assign(&g);
    }
    for k in (0..n.saturating_sub(1)).rev() {
        let mut v = Array1::zeros(m);
        for i in 0..m {
            v[i] = weights[i] * emissions[(k + 1, i)] * beta[i];
        }
        let mut bk = trans.t().dot(&v);
        let s: f64 = bk.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonFinite("backward normalizer"));
        }
        bk /= s;

        let mut g = Array1::zeros(m);
        for i in 0..m {
            g[i] = alphas[(k, i)] * bk[i];
        }
        let gs: f64 = g.sum();
        if !(gs > 0.0) || !gs.is_finite() {
            return Err(Error::NonFinite("smoothed marginal normalizer"));
        }
        g /= gs;
        marginals.row_mut(k).assign(&g);
        beta = bk;
    }

    if !loglik.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    Ok(LatentPosterior { marginals, loglik })
}

/// E-step outputs assembled from the smoothed marginals.
///
/// `gram` is not `design_mean' design_mean / sigma2` in general: the second
/// moment of the modulation enters, not the square of its first moment.
#[derive(Debug, Clone)]
pub struct MomentSet {
    /// n x p conditional mean of the regressor matrix, `E[X | y, theta]`.
    pub design_mean: Array2<f64>,
    /// p x p conditional precision-weighted Gram matrix,
    /// `E[X' X | y, theta] / sigma2`; symmetric positive semidefinite.
    pub gram: Array2<f64>,
    /// Right-hand side of the M-step normal equations,
    /// `E[X' | y, theta] y / sigma2`.
    pub rhs: Array1<f64>,
}

impl MomentSet {
    /// Exact moments for a fully observed design: `E1 = X`,
    /// `gram = X'X / sigma2`, `rhs = X'y / sigma2`.
    pub fn from_design(x: &Array2<f64>, y: &Array1<f64>, noise_var: f64) -> Result<Self> {
        let (n, _p) = x.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} responses for {} design rows",
                y.len(),
                n
            )));
        }
        if !(noise_var > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_var must be > 0, got {noise_var}"
            )));
        }
        let gram = x.t().dot(x) / noise_var;
        let rhs = x.t().dot(y) / noise_var;
        Ok(MomentSet {
            design_mean: x.clone(),
            gram,
            rhs,
        })
    }
}

/// Posterior means of the modulation and its square per step:
/// `E[sin(phase_k + z_k)]` and `E[sin^2(phase_k + z_k)]` under the smoothed
/// marginals.
pub fn sin_moments(
    spec: &ProblemSpec,
    posterior: &LatentPosterior,
    grid: &GridSpec,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let (n, m) = posterior.marginals.dim();
    if n != spec.n || m != grid.num_points() {
        return Err(Error::DimensionMismatch(format!(
            "posterior is {n} x {m}, expected {} x {}",
            spec.n,
            grid.num_points()
        )));
    }
    let nodes = grid.nodes();
    let mut mean = Array1::zeros(n);
    let mut mean_sq = Array1::zeros(n);
    for k in 0..n {
        let phase = spec.phase(k);
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for i in 0..m {
            let s = (phase + nodes[i]).sin();
            let g = posterior.marginals[(k, i)];
            e1 += g * s;
            e2 += g * s * s;
        }
        mean[k] = e1;
        mean_sq[k] = e2;
    }
    Ok((mean, mean_sq))
}

/// E-step conditional moments under the smoothed marginals. Only per-step
/// marginals enter because row k of the regressor matrix depends on `z_k`
/// alone. Accumulation order is fixed, so results do not depend on threading.
pub fn compute_moments(
    spec: &ProblemSpec,
    posterior: &LatentPosterior,
    grid: &GridSpec,
) -> Result<MomentSet> {
    let y = spec.responses()?;
    let (sin_mean, sin_sq_mean) = sin_moments(spec, posterior, grid)?;
    let (n, p) = (spec.n, spec.p);
    let inv_var = 1.0 / spec.noise_var_obs;

    let mut design_mean = Array2::zeros((n, p));
    let mut gram = Array2::zeros((p, p));
    let mut rhs = Array1::zeros(p);
    for k in 0..n {
        let u = spec.inputs.row(k);
        for j in 0..p {
            design_mean[(k, j)] = sin_mean[k] * u[j];
        }
        let w2 = sin_sq_mean[k] * inv_var;
        for a in 0..p {
            let ua = u[a];
            for b in 0..p {
                gram[(a, b)] += w2 * ua * u[b];
            }
        }
        let w1 = sin_mean[k] * y[k] * inv_var;
        for j in 0..p {
            rhs[j] += w1 * u[j];
        }
    }
    Ok(MomentSet {
        design_mean,
        gram,
        rhs,
    })
}
